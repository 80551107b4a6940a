"""Counterexample constructions with designed-to-fail tail behaviour.

The central object is a continuous law G on the positive half-line whose
hazard function climbs in ever-flatter piecewise-linear rungs: hazard levels
follow the recursion L_{k+1} = exp(L_k)/L_k, the rung endpoints sit at
t_k = L_k^2, and the rate on each rung is 1/(L_{k+1}+L_k).  The tail then
matches a square-root-exponential at the endpoints while decaying almost
flat in between, which makes pairs of moderate jumps vastly more likely than
a single equivalent jump.  Shifting G left by twice its mean gives a
negative-drift increment law whose n-fold convolution tails outrun any
linear-in-n envelope along (n_k, x_k).

Everything downstream of the recursion is exact: segment integrals in closed
form, convolution powers on a lattice, double-jump probabilities by the
pairwise tail integral.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dist import Distribution, HazardDistribution, ShiftedDistribution, Weibull, discretize
from .errors import InapplicableError, ResourceBudgetError
from .logspace import NEG_INF
from .classify import log_pairwise_tail_integral
from .tailcalc import CELL_BUDGET, conv_power_tail

__all__ = [
    "PathologicalG", "build_pathological", "verify_Jk", "two_jump_lower_bound",
    "superlinearity_report", "weibull_blowup_scenario", "stopping_time_blowup_scenario",
]

_K_CAP = 5  # exp(L_5) overflows double precision; higher rungs exist only in logs


@dataclass(frozen=True)
class PathologicalG:
    """The rung construction: sequences, hazard view, and derived test points."""

    k_max: int
    R: np.ndarray        # hazard levels L_0..L_{K}, K = min(k_max + 1, 5)
    t: np.ndarray        # rung endpoints t_k = L_k^2
    r: np.ndarray        # rung rates r_k = 1/(L_{k+1} + L_k), as far as floats reach
    log_R: np.ndarray    # log of L_0..L_{k_max+1} (L_0 maps to -inf)
    log_r: np.ndarray    # log of r_0..r_{k_max}
    view: HazardDistribution
    b: float             # mean of G (exact segment integration)
    n_seq: np.ndarray    # n_k = floor(L_k)
    x_seq: np.ndarray    # x_k = t_k - 2 n_k b

    def tail_at_rung(self, k: int) -> float:
        return math.exp(-self.R[k])


def build_pathological(k_max: int) -> PathologicalG:
    """Iterate the rung recursion and assemble the hazard view.

    ``k_max`` is capped at 5: the level after L_5 only exists in log space,
    so a k_max = 5 object carries a zero final slope and its beyond-grid
    quantities must be read from the log arrays.
    """
    if not 1 <= k_max <= _K_CAP:
        raise ResourceBudgetError(f"k_max must be in [1, {_K_CAP}] (float overflow guard)")
    K = min(k_max + 1, _K_CAP)
    R = [0.0, 1.0]
    while len(R) <= K:
        prev = R[-1]
        R.append(math.exp(prev) / prev)
    R = np.array(R)  # L_0..L_K
    log_R = np.full(k_max + 2, NEG_INF)
    for k in range(1, k_max + 2):
        log_R[k] = math.log(R[k]) if k <= K else R[k - 1] - math.log(R[k - 1])
    t = R**2
    r = 1.0 / (R[2:] + R[1:-1])            # r_1..r_{K-1}
    r = np.concatenate(([1.0 / (R[1] + R[0])], r))
    log_r = np.array([-np.logaddexp(log_R[k + 1], log_R[k]) for k in range(k_max + 1)])
    knots = t[: k_max + 1]
    values = R[: k_max + 1]
    final_slope = math.exp(log_r[k_max])    # 0.0 underflow at k_max = 5, by design
    view = HazardDistribution(knots, values, final_slope)
    b = _exact_mean(R, r)
    n_seq = np.floor(R[: k_max + 1]).astype(int)
    x_seq = t[: k_max + 1] - 2 * n_seq * b
    return PathologicalG(k_max=k_max, R=R, t=t, r=r[: k_max + 1], log_R=log_R,
                         log_r=log_r, view=view, b=b, n_seq=n_seq, x_seq=x_seq)


def _exact_mean(R: np.ndarray, r: np.ndarray) -> float:
    """Mean of the full (infinite) construction; rungs past the float range
    contribute less than 1/L_5 ~ 1e-19, below double resolution of the sum."""
    total = 0.0
    for k in range(len(R) - 1):
        total += (math.exp(-R[k]) - math.exp(-R[k + 1])) / r[k]
    return total


@dataclass(frozen=True)
class JkReport:
    k: int
    log_value: float
    log_bound: float
    window: tuple[float, float]
    containment_ok: bool
    passes: bool


def verify_Jk(G: PathologicalG, k: int) -> JkReport:
    """Exact middle-window pair integral against its designed floor.

    J_k integrates tail(t_k - y) over the middle half of [0, t_k] weighted by
    the density of G; the floor is tail(t_k) / (3 L_{k-1}).  The window
    containment condition (window inside the k-th rung neighbourhood) is
    reported, never silently assumed.
    """
    if not 2 <= k <= G.k_max:
        raise InapplicableError("verify_Jk needs 2 <= k <= k_max")
    t_k = float(G.t[k])
    lo, hi = t_k / 4, 3 * t_k / 4
    containment = (G.t[k - 1] <= lo) and (hi <= t_k - G.t[k - 1])
    log_value = log_pairwise_tail_integral(G.view, t_k, lo, hi, with_rate=True)
    log_bound = -G.R[k] - math.log(3 * G.R[k - 1])
    return JkReport(k=k, log_value=log_value, log_bound=log_bound,
                    window=(lo, hi), containment_ok=containment,
                    passes=bool(log_value >= log_bound))


def two_jump_lower_bound(G: PathologicalG, n: int, x: float) -> float:
    """(n^2/3) P{two independent draws both exceed n and sum past x}.

    Exact via the pairwise tail integral over hazard segments.  For x <= 2n
    the joint event needs nothing beyond both draws clearing n.
    """
    if n < 2:
        raise InapplicableError("two-jump bound needs n >= 2")
    view = G.view
    log_n2_3 = math.log(n * n / 3.0)
    if x <= 2 * n:
        return math.exp(log_n2_3 + 2 * float(view.log_tail(float(n))))
    log_inner = log_pairwise_tail_integral(view, x, float(n), x - n, with_rate=True)
    log_corner = float(view.log_tail(x - n)) + float(view.log_tail(float(n)))
    return math.exp(log_n2_3 + np.logaddexp(log_inner, log_corner))


@dataclass(frozen=True)
class SuperlinearityReport:
    k: int
    n: int
    x: float
    step: float
    ratio: float                  # P{S_n > x_k} / (n * tail(x_k))
    ratio_lower: float            # same with the lattice rounding backed out
    predicted_floor: float        # n / (10 e^{2b} ln n)
    log_conv_tail: float
    log_increment_tail: float
    shift_bound_ok: bool          # tail_F(x_k) <= tail_G(t_k) e^{2b}, exact


def superlinearity_report(G: PathologicalG, k: int, step: float | None = None,
                          cell_budget: int = CELL_BUDGET) -> SuperlinearityReport:
    """Exact convolution power of the shifted law at its designed test point.

    Work happens on the positive lattice of G: with increments shifted by
    -2b, {S_n > x_k} is the same event as {T_n > t_k}.  The lattice rounds
    values up by at most one step, so the true probability is bracketed by
    the lattice tails at t_k and t_k + n*step; both ends are reported.
    """
    if not 2 <= k <= min(G.k_max, 4):
        raise InapplicableError("superlinearity is exact-computable for 2 <= k <= 4")
    t_k, n, x_k = float(G.t[k]), int(G.n_seq[k]), float(G.x_seq[k])
    if step is None:
        step = max(0.05, t_k / 2**20)
    lat = discretize(G.view, step, t_k + (n + 4) * step)
    grid = conv_power_tail(lat, n, x_hi=t_k + (n + 3) * step, cell_budget=cell_budget)
    log_p_hi = float(grid.log_tail_at(t_k))
    log_p_lo = float(grid.log_tail_at(t_k + n * step))
    log_f = float(G.view.log_tail(x_k + 2 * G.b))
    denom = math.log(n) + log_f
    ratio = math.exp(log_p_hi - denom)
    ratio_lower = math.exp(log_p_lo - denom)
    floor = n / (10.0 * math.exp(2 * G.b) * math.log(n))
    shift_ok = log_f <= -G.R[k] + 2 * G.b + 1e-12
    return SuperlinearityReport(k=k, n=n, x=x_k, step=step, ratio=ratio,
                                ratio_lower=ratio_lower, predicted_floor=floor,
                                log_conv_tail=log_p_hi, log_increment_tail=log_f,
                                shift_bound_ok=bool(shift_ok))


def shifted_increment_law(G: PathologicalG) -> ShiftedDistribution:
    """The negative-mean increment law: the rung construction shifted by -2b."""
    return ShiftedDistribution(G.view, -2.0 * G.b)


# ---------------------------------------------------------------------------
# blow-up scenarios


def weibull_blowup_scenario(beta: float):
    """Stretched-exponential increments with a stopping count whose tail is
    matched at exactly the drift scale: P{c tau > y} ~ y^{-1} exp(-y^beta).

    Exposes the regime where the mean-times-tail prediction fails from below:
    the count's own fluctuation mass pushes the stopped-sum tail up by a
    factor that grows without bound.  Requires beta in (1/2, 1); slower
    decay makes the two tails incomparable in the other direction.
    """
    if not 0.5 < beta < 1.0:
        raise InapplicableError("blow-up construction requires beta in (1/2, 1)")
    # counting tail model is attached by the stopped module; built lazily
    # there to keep this module free of series machinery
    from .stopped import weibull_matched_counting
    return weibull_matched_counting(beta)


def stopping_count_window(x: float, beta: float) -> int:
    """H(x) = ceil(x^(1-beta) ln(1+x)), clamped below x/2.

    Grows faster than x^(1-beta) yet stays o(x): exactly the window in which
    a first-increment-measurable stopping count escapes the mean-times-tail
    asymptotics.
    """
    if x <= 0:
        return 0
    return int(min(math.ceil(x ** (1.0 - beta) * math.log1p(x)), max(x / 2 - 1, 0)))


def stopping_time_blowup_scenario(beta: float):
    """Increment law and rule parameters for the dependent-stopping blow-up.

    Increments are 1 + Weibull(beta) (so every step contributes at least 1),
    and the stopping count is H(2 xi_1) + 1: a legitimate stopping time that
    peeks at nothing, yet couples the count to the first jump so strongly
    that the stopped-sum tail exceeds any mean-times-tail prediction.
    Returns (increment distribution, rule kind string, beta).
    """
    if not 0.0 < beta < 1.0:
        raise InapplicableError("beta must lie in (0, 1)")
    increments: Distribution = ShiftedDistribution(Weibull(beta), 1.0)
    return increments, "h_of_first_increment", beta
