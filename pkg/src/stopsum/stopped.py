"""Exact tails of randomly stopped sums and maxima, with their predictors.

The stopped-sum tail is the count-weighted series of convolution-power
tails; evaluation runs the sequential convolution ladder once and stops with
a certificate: either the increment support forces every later term to one
(then the remainder is added exactly), or the count's tail is small enough
that the crude remainder bound P{count > N} is below the requested relative
budget.  The certificate is returned with the value, never discarded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .dist import Distribution, LatticeDistribution
from .errors import (
    DivergenceError,
    InapplicableError,
    ResourceBudgetError,
    ValidationError,
)
from .logspace import NEG_INF, log_sub, log_sum, log_tail_from_mass
from .tailcalc import (
    CELL_BUDGET,
    LatticePowers,
    RatioDiagnostic,
    RatioPoint,
    Verdict,
    _State,
)

__all__ = [
    "TailModel", "CountingDistribution", "StoppedSumScenario", "SeriesTail",
    "stopped_sum_tail_exact", "stopped_max_tail_exact", "stopped_tail_grid",
    "predictor_light_tau", "predictor_comparable_tau", "condition_eq1_check",
    "condition_series_check", "gw_generation_tail", "liminf_floor_check",
    "weibull_matched_counting",
]


@dataclass(frozen=True)
class TailModel:
    """Analytic count tail for n beyond the stored range.

    ``power``:   P{tau > n} = amp * n^(-alpha)
    ``weibull``: P{tau > n} = amp * n^(-gamma) * exp(-(rate*n)^beta)
    """

    kind: str
    alpha: float = 0.0
    amp: float = 1.0
    gamma: float = 0.0
    rate: float = 1.0
    beta: float = 1.0

    def log_tail(self, n: float) -> float:
        if n < 1:
            return 0.0
        if self.kind == "power":
            return math.log(self.amp) - self.alpha * math.log(n)
        if self.kind == "weibull":
            return (math.log(self.amp) - self.gamma * math.log(n)
                    - (self.rate * n) ** self.beta)
        raise ValidationError(f"unknown tail model {self.kind!r}")

    def tail_sum_from(self, n0: int) -> float:
        """Sum of P{tau > m} for m >= n0 (the mean contribution past the cap)."""
        if self.kind == "power":
            if self.alpha <= 1:
                raise DivergenceError("power-tail count has infinite mean for alpha <= 1")
            return float(self.amp * special.zeta(self.alpha, n0))
        total, m = 0.0, n0
        while True:
            term = math.exp(self.log_tail(m))
            total += term
            m += 1
            if term < 1e-18 * max(total, 1e-300) or m > n0 + 10_000_000:
                return total


class CountingDistribution:
    """Law of a counting variable on {0, 1, 2, ...} with queryable tail.

    Mass up to ``n_cap`` is explicit (log domain); an optional analytic
    ``tail_model`` carries the rest.  The mean must be finite: every consumer
    of a counting law in this package weights by it.
    """

    def __init__(self, log_mass, tail_model: TailModel | None = None,
                 *, _tol: float = 1e-9):
        lm = np.asarray(log_mass, dtype=float)
        if lm.ndim != 1 or lm.size == 0:
            raise ValidationError("counting law needs a 1-D mass sequence")
        self.log_mass = lm
        self.n_cap = lm.size - 1
        self.tail_model = tail_model
        beyond = tail_model.log_tail(self.n_cap) if tail_model else NEG_INF
        total = np.logaddexp(log_sum(lm), beyond)
        if abs(math.expm1(total)) > _tol:
            raise ValidationError(f"counting mass off by {math.expm1(total):.2e}")
        self._log_tail_grid = log_tail_from_mass(lm, beyond)
        self._mean = self._exact_mean()

    def _exact_mean(self) -> float:
        m = float(np.sum(np.exp(self._log_tail_grid)))  # sum of P{tau > n}, n <= cap
        if self.tail_model is not None:
            m += self.tail_model.tail_sum_from(self.n_cap + 1)
        return m

    def mean(self) -> float:
        return self._mean

    def log_pmf(self, n: int) -> float:
        if 0 <= n <= self.n_cap:
            return float(self.log_mass[n])
        if self.tail_model is None:
            return NEG_INF
        return log_sub(self.tail_model.log_tail(n - 1), self.tail_model.log_tail(n))

    def log_tail(self, m: float) -> float:
        """log P{tau > m} for real m."""
        if m < 0:
            return 0.0
        k = int(math.floor(m + 1e-9))
        if k <= self.n_cap:
            return float(self._log_tail_grid[k])
        if self.tail_model is None:
            return NEG_INF
        return self.tail_model.log_tail(k)

    def tail(self, m: float) -> float:
        return math.exp(self.log_tail(m))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Draws clamped at n_cap; callers count clamp events as breaches."""
        cum = np.cumsum(np.exp(self.log_mass))
        u = rng.random(size)
        return np.searchsorted(cum, u, side="right")

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_tail(cls, tail_fn, n_cap: int,
                  tail_model: TailModel | None = None) -> "CountingDistribution":
        """Build from log P{tau > n}; pmf(n) = tail(n-1) - tail(n), exactly."""
        lt = np.array([tail_fn(n) for n in range(n_cap + 1)], dtype=float)
        lm = np.empty(n_cap + 1)
        lm[0] = log_sub(0.0, lt[0])
        for n in range(1, n_cap + 1):
            lm[n] = log_sub(lt[n - 1], lt[n])
        return cls(lm, tail_model)

    @classmethod
    def geometric(cls, p: float = 0.5, n_cap: int = 256) -> "CountingDistribution":
        """P{tau = n} = p (1-p)^(n-1) on n >= 1."""
        if not 0 < p < 1:
            raise ValidationError("geometric parameter must lie in (0, 1)")
        return cls.from_tail(lambda n: n * math.log1p(-p), n_cap)

    @classmethod
    def deterministic(cls, n: int) -> "CountingDistribution":
        lm = np.full(n + 1, NEG_INF)
        lm[n] = 0.0
        return cls(lm)

    @classmethod
    def power_tail(cls, alpha: float, n_cap: int = 4096) -> "CountingDistribution":
        """P{tau > n} = n^(-alpha) for n >= 1 (a lattice power-law count)."""
        if alpha <= 1:
            raise DivergenceError("power-tail count needs alpha > 1 for a finite mean")
        model = TailModel("power", alpha=alpha, amp=1.0)
        return cls.from_tail(lambda n: 0.0 if n == 0 else -alpha * math.log(n),
                             n_cap, model)


def weibull_matched_counting(beta: float, scale: float, n_cap: int = 20000
                             ) -> CountingDistribution:
    """Count whose scaled tail matches a stretched-exponential with a 1/x factor.

    P{scale*tau > y} = y^(-1) exp(-y^beta) wherever that is below one; the
    scaling constant is meant to be the increment mean, so the count's tail
    sits exactly at the drift scale of the stopped sum.
    """
    if not 0 < beta < 1:
        raise InapplicableError("matched counting needs beta in (0, 1)")

    def log_tail(n: int) -> float:
        if n < 1:
            return 0.0
        y = scale * n
        return min(0.0, -math.log(y) - y**beta)

    model = TailModel("weibull", amp=1.0 / scale, gamma=1.0, rate=scale, beta=beta)
    return CountingDistribution.from_tail(log_tail, n_cap, model)


def power_offspring(alpha: float, mean: float, n_cap: int = 4096) -> LatticeDistribution:
    """Integer offspring law with tail q k^(-alpha) and the requested mean.

    All mass above zero follows the power tail; the atom at zero tunes the
    mean (q = mean / (1 + zeta(alpha)); the mean must stay in range).
    """
    if alpha <= 1:
        raise DivergenceError("offspring tail needs alpha > 1")
    q = mean / (1.0 + float(special.zeta(alpha, 1)))
    if not 0 < q <= 1:
        raise ValidationError(f"mean {mean:g} unreachable for alpha {alpha:g}")
    ks = np.arange(1, n_cap + 1)
    tails = np.concatenate(([q], q * ks.astype(float) ** -alpha))
    pmf = np.empty(n_cap + 1)
    pmf[0] = 1.0 - q
    pmf[1:] = tails[:-1] - tails[1:]
    pmf[-1] += tails[-1]  # residual lumped at the cap (beyond any queried x)
    return LatticeDistribution.from_probs(0, 1.0, pmf)


@dataclass(frozen=True)
class StoppedSumScenario:
    """Increment law plus counting law (or path-dependent rule name)."""

    increments: Distribution
    counting: CountingDistribution | None
    dependence: str = "independent"  # or a stopping-rule kind consumed by sim
    rule_params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SeriesTail:
    """Stopped-series value with its truncation certificate."""

    value: float
    remainder_bound: float
    terms_used: int

    @property
    def certified(self) -> bool:
        return self.remainder_bound <= 1e-3 * max(self.value, 1e-300)


# ---------------------------------------------------------------------------
# series evaluation


def _plan_terms(F: LatticeDistribution, tau: CountingDistribution, x_max: float,
                rel_budget: float) -> int:
    """Upper bound on the number of series terms needed at any x <= x_max."""
    m0 = F.support_start
    if m0 > 0:
        return int(math.floor(x_max / m0 + 1e-9)) + 1
    floor = max(tau.tail(0), 1e-12) * math.exp(float(F.log_tail(x_max))) * 0.1
    n = 1
    while tau.tail(n) > rel_budget * floor:
        n += 1
        if n > 10**6:
            raise ResourceBudgetError("series needs more than 1e6 terms to certify")
    return n


def stopped_tail_grid(F: LatticeDistribution, tau: CountingDistribution, xs,
                      kind: str = "sum", rel_budget: float = 1e-3,
                      cell_budget: int = CELL_BUDGET):
    """Exact series over the x-grid; returns (values, remainder_bounds, terms).

    ``kind='sum'`` weights convolution-power tails, ``kind='max'`` weights
    running-maximum tails (computed by the dual clamp recursion on the same
    ladder).  Both stop on the first satisfied certificate.
    """
    if kind not in ("sum", "max"):
        raise ValidationError("kind must be 'sum' or 'max'")
    xs = np.asarray(xs, dtype=float)
    x_max = float(np.max(xs))
    n_plan = _plan_terms(F, tau, x_max, rel_budget)
    drop = max(0.0, -F.support_start)
    x_hi = x_max + n_plan * drop + 2 * F.step
    powers = LatticePowers(F, x_hi, cell_budget)
    values = np.where(xs < 0, tau.tail(-1) - tau.tail(0), 0.0)  # P{tau = 0} term
    m0 = F.support_start
    support_cut = m0 > 0
    state = None
    n_used = 0
    remainder = None
    for n in range(1, n_plan + 1):
        if state is None:
            state = powers._base
        else:
            state = powers._compose(state, powers._base)
            if kind == "max":
                state = _clamp_at_zero(state)
        if kind == "max" and n == 1:
            state = _clamp_at_zero(state)
        grid = powers.state_tail(state, n)
        p_n = math.exp(tau.log_pmf(n))
        if p_n > 0.0:
            values = values + p_n * grid.tail_at(xs)
        n_used = n
        t_tail = tau.tail(n)
        if support_cut and (n + 1) * m0 > x_max:
            values = values + t_tail  # every later power tail is exactly 1 here
            remainder = 0.0
            break
        if t_tail <= rel_budget * float(np.min(values[xs >= 0], initial=math.inf)):
            remainder = t_tail
            break
    if remainder is None:
        raise ResourceBudgetError(
            f"series not certified after {n_used} terms (count cap too small "
            f"or remainder budget {rel_budget:g} unreachable)")
    return values, np.full_like(values, remainder), n_used


def _clamp_at_zero(state: _State) -> _State:
    if state.offset >= 0:
        return state
    lm, off = state.log_mass, state.offset
    cut = min(-off, lm.size)
    lump = log_sum(lm[:cut])
    rest = lm[cut:] if cut < lm.size else np.array([NEG_INF])
    first = float(np.logaddexp(lump, rest[0]))
    return _State(0, np.concatenate(([first], rest[1:])), state.log_overflow)


def stopped_sum_tail_exact(F: LatticeDistribution, tau: CountingDistribution,
                           x: float, rel_budget: float = 1e-3,
                           cell_budget: int = CELL_BUDGET) -> SeriesTail:
    """P{S_tau > x} for an independent count, with truncation certificate."""
    vals, rems, n = stopped_tail_grid(F, tau, [x], "sum", rel_budget, cell_budget)
    return SeriesTail(float(vals[0]), float(rems[0]), n)


def stopped_max_tail_exact(F: LatticeDistribution, tau: CountingDistribution,
                           x: float, rel_budget: float = 1e-3,
                           cell_budget: int = CELL_BUDGET) -> SeriesTail:
    """P{M_tau > x}: count-weighted running-maximum tails; >= the sum variant."""
    vals, rems, n = stopped_tail_grid(F, tau, [x], "max", rel_budget, cell_budget)
    return SeriesTail(float(vals[0]), float(rems[0]), n)


# ---------------------------------------------------------------------------
# predictors and conditions


def predictor_light_tau(F: Distribution, tau: CountingDistribution, x: float) -> float:
    """First-moment prediction: E tau * tail(x)."""
    return tau.mean() * math.exp(float(F.log_tail(x)))


def predictor_comparable_tau(F: Distribution, tau: CountingDistribution,
                             x: float) -> float:
    """Two-term prediction E tau * tail(x) + P{tau > x / E xi} (E xi > 0).

    The increment mean is taken from the law actually being summed (for a
    lattice, its exact lattice mean), never from family parameters.
    """
    mu = F.mean()
    if mu <= 0:
        raise InapplicableError("two-term predictor needs E xi > 0")
    return tau.mean() * math.exp(float(F.log_tail(x))) + tau.tail(x / mu)


def condition_eq1_check(tau: CountingDistribution, F: Distribution, c: float,
                        x_grid) -> RatioDiagnostic:
    """Ratios P{c tau > x} / tail(x); vanishing is the light-count condition."""
    if c <= 0:
        raise InapplicableError("scale c must be positive")
    points = []
    for x in np.asarray(x_grid, dtype=float):
        x = float(x)
        ratio = math.exp(tau.log_tail(x / c) - float(F.log_tail(x)))
        points.append(RatioPoint(x, None, ratio))
    return RatioDiagnostic.from_ratios(points, target=0.0)


def condition_series_check(tau: CountingDistribution, F: Distribution, c: float,
                           N: int):
    """Partial sums of P{tau = n} / tail(c n) with a growth verdict.

    Convergence of the full series is the summability condition that is
    strictly stronger than the vanishing-ratio condition.
    """
    mu = F.mean()
    if mu >= 0 and c <= mu:
        raise InapplicableError(f"need c > E xi = {mu:g}")
    terms = np.array([math.exp(tau.log_pmf(n) - float(F.log_tail(c * n)))
                      for n in range(1, N + 1)])
    partial = float(np.sum(terms))
    w = terms[-min(5, terms.size):]
    if np.all(np.diff(w) < 0) and w[-1] < 1e-3 * partial:
        verdict = Verdict("converging_to", last_deviation=float(w[-1]))
    elif w.size >= 2 and np.all(np.diff(w) >= 0):
        verdict = Verdict("diverging")
    else:
        verdict = Verdict("inconclusive")
    return partial, verdict


def liminf_floor_check(F: LatticeDistribution, tau: CountingDistribution,
                       x_grid, rel_budget: float = 1e-3) -> RatioDiagnostic:
    """Ratios of the exact series to tail(x), against the E tau floor.

    For nonnegative increments the far-grid ratios must not drop below
    (1 - 2%) of the count mean; callers assert that floor on the points.
    """
    if F.support_start < 0:
        raise InapplicableError("floor check is for nonnegative increments")
    xs = np.asarray(x_grid, dtype=float)
    vals, _, _ = stopped_tail_grid(F, tau, xs, "sum", rel_budget)
    ratios = vals / np.exp(np.asarray(F.log_tail(xs), dtype=float))
    points = [RatioPoint(float(x), None, float(r)) for x, r in zip(xs, ratios)]
    return RatioDiagnostic.from_ratios(points, target=tau.mean(), tolerance=0.02)


# ---------------------------------------------------------------------------
# branching generations


def gw_generation_tail(offspring: LatticeDistribution, generations: int, x: float,
                       window_factor: float = 16.0,
                       cell_budget: int = CELL_BUDGET) -> float:
    """Exact P{X_gen > x} for a branching process with the given offspring law.

    Iterates the random-sum convolution on an integer window [0, W]; mass
    beyond W (population overflow) is treated as exceedance, which is
    one-sided and bounded by the reported overflow of the final generation.
    """
    if generations < 1:
        raise InapplicableError("generations must be >= 1")
    if generations > 4:
        raise ResourceBudgetError("exact branching tails are capped at 4 generations")
    if offspring.step != 1.0 or offspring.offset < 0:
        raise ValidationError("offspring law must sit on the nonnegative integers")
    if generations == 1:
        return float(offspring.tail(x))
    W = int(max(x * window_factor, x + 64, 256))
    if W + 1 > cell_budget:
        raise ResourceBudgetError(f"branching window {W} exceeds the cell budget")
    f = np.zeros(W + 1)
    idx = offspring.offset + np.arange(offspring.log_mass.size)
    inside = idx <= W
    f[idx[inside]] = np.exp(offspring.log_mass[inside])
    pop = f.copy()  # generation 1
    for _ in range(generations - 1):
        # next generation: mixture over the parent count n of the n-fold
        # offspring convolution; all mass not landing in [0, W] is treated as
        # exceedance (one-sided, vanishes as the window factor grows)
        n_top = int(np.nonzero(pop)[0][-1]) if pop.any() else 0
        new = np.zeros(W + 1)
        conv = np.zeros(W + 1)
        conv[0] = 1.0
        new += pop[0] * conv
        for n in range(1, n_top + 1):
            conv = np.convolve(conv, f)[: W + 1]
            if pop[n] > 0.0:
                new += pop[n] * conv
            if conv.sum() < 1e-300:
                break
        pop = new
    over = 1.0 - pop.sum()
    return float(pop[int(math.floor(x + 1e-9)) + 1:].sum() + over)
