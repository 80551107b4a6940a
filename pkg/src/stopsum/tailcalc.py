"""Exact convolution-power and partial-maxima tails on lattices.

The working representation is a lattice of log-masses truncated at a window
end ``hi``.  Mass pushed beyond the window is folded into an overflow cell and
treated as guaranteed exceedance.  Because every increment is bounded below by
the lattice support start, that treatment is *exact* for queries at
``x <= valid_to``; callers size the window from the queries they intend to
make, and ``TailGrid.valid_to`` records the certified range.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dist import Distribution, LatticeDistribution
from .errors import InapplicableError, ResourceBudgetError
from .logspace import NEG_INF, log1mexp, log_convolve, log_sum, log_tail_from_mass

CELL_BUDGET = 1 << 26


# ---------------------------------------------------------------------------
# result carriers


@dataclass(frozen=True)
class TailGrid:
    """Exceedance probabilities of a lattice law, queryable at any real x."""

    x_start: float
    step: float
    log_tail: np.ndarray
    overflow_log_mass: float
    valid_to: float = math.inf

    def log_tail_at(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.floor((x - self.x_start) / self.step + 1e-9).astype(int)
        idx = np.clip(idx, -1, self.log_tail.size - 1)
        grid = np.concatenate(([0.0], self.log_tail))
        lt = grid[idx + 1]
        return lt if lt.ndim else float(lt)

    def tail_at(self, x):
        return np.exp(self.log_tail_at(x))

    @property
    def grid_end(self) -> float:
        return self.x_start + (self.log_tail.size - 1) * self.step

    def to_csv(self, path) -> None:
        xs = self.x_start + np.arange(self.log_tail.size) * self.step
        with open(path, "w") as fh:
            fh.write("x,log_tail\n")
            for x, lt in zip(xs, self.log_tail):
                fh.write(f"{x:.17g},{lt:.17g}\n")


@dataclass(frozen=True)
class RatioPoint:
    x: float
    n: int | None
    ratio: float


@dataclass(frozen=True)
class Verdict:
    kind: str  # converging_to | diverging | bounded_by | inconclusive
    target: float | None = None
    last_deviation: float | None = None
    sup: float | None = None

    def __str__(self) -> str:
        if self.kind == "converging_to" and self.target is not None:
            return f"converging_to({self.target:g}, last_dev={self.last_deviation:.3g})"
        if self.kind == "bounded_by" and self.sup is not None:
            return f"bounded_by({self.sup:.6g})"
        return self.kind


_TREND_WINDOW = 5


def assess_trend(ratios, target: float, tol: float) -> Verdict:
    """Finite-grid trend rule, applied to ratios in grid order.

    Converging: the last ``_TREND_WINDOW`` deviations from ``target`` strictly
    decrease and the final one is below ``tol``.  Diverging: the final
    deviation exceeds ``tol`` and the window shows no improvement.  Anything
    else is inconclusive.  This is a diagnostic, not a test statistic.
    """
    devs = np.abs(np.asarray(ratios, dtype=float) - target)
    if devs.size == 0:
        return Verdict("inconclusive", target=target)
    w = devs[-min(_TREND_WINDOW, devs.size):]
    last = float(w[-1])
    if last < tol and (w.size == 1 or np.all(np.diff(w) < 0)):
        return Verdict("converging_to", target=target, last_deviation=last)
    if last > tol and last >= w[0]:
        return Verdict("diverging", target=target, last_deviation=last)
    return Verdict("inconclusive", target=target, last_deviation=last)


def assess_boundedness(values, tol: float = 0.05) -> Verdict:
    """Bounded-vs-diverging call for supremum-style tables."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return Verdict("inconclusive")
    w = vals[-min(_TREND_WINDOW, vals.size):]
    if w.size >= 2 and np.all(np.diff(w) > 0) and w[-1] / w[0] - 1 > tol:
        return Verdict("diverging", sup=float(np.max(vals)))
    return Verdict("bounded_by", sup=float(np.max(vals)))


@dataclass
class RatioDiagnostic:
    """Table of ratios plus the trend verdict recomputed from the table."""

    points: list[RatioPoint]
    verdict: Verdict
    target: float | None = None
    tolerance: float = 0.05

    @classmethod
    def from_ratios(cls, points: list[RatioPoint], target: float | None,
                    tolerance: float = 0.05, bounded: bool = False) -> "RatioDiagnostic":
        ratios = [p.ratio for p in points]
        if bounded or target is None:
            verdict = assess_boundedness(ratios, tolerance)
        else:
            verdict = assess_trend(ratios, target, tolerance)
        return cls(points=points, verdict=verdict, target=target, tolerance=tolerance)

    def ratios(self) -> np.ndarray:
        return np.array([p.ratio for p in self.points])


# ---------------------------------------------------------------------------
# windowed lattice powers


@dataclass(frozen=True)
class _State:
    offset: int          # index of first cell, in units of step
    log_mass: np.ndarray
    log_overflow: float  # mass at or beyond the window end (guaranteed exceed)


def _combined_overflow(ov_a: float, ov_b: float, log_spill: float) -> float:
    log_spill = min(log_spill, 0.0)  # guard rounding dust above a total of 1
    if ov_a == NEG_INF and ov_b == NEG_INF:
        return log_spill
    both_kept = min(float(log1mexp(min(ov_a, 0.0)))
                    + float(log1mexp(min(ov_b, 0.0))), 0.0)
    return min(float(np.logaddexp(log1mexp(both_kept), log_spill)), 0.0)


def _truncate(offset: int, lm: np.ndarray, ov: float, hi_idx: int) -> _State:
    keep = hi_idx - offset + 1
    if keep >= lm.size:
        return _State(offset, lm, ov)
    if keep <= 0:
        total = float(np.logaddexp(log_sum(lm), ov))
        return _State(offset, np.array([NEG_INF]), total)
    spill = log_sum(lm[keep:])
    return _State(offset, lm[:keep], float(np.logaddexp(ov, spill)))


class LatticePowers:
    """Convolution powers of one lattice law on a shared truncation window."""

    def __init__(self, F: LatticeDistribution, x_hi: float | None = None,
                 cell_budget: int = CELL_BUDGET):
        self.F = F
        self.step = F.step
        self.cell_budget = int(cell_budget)
        self.hi_idx = (math.ceil(x_hi / F.step - 1e-9) if x_hi is not None
                       else None)
        base = _State(F.offset, F.log_mass, F.log_overflow)
        if self.hi_idx is not None:
            base = _truncate(base.offset, base.log_mass, base.log_overflow, self.hi_idx)
        self._base = base
        self._pow2 = [base]
        # exactness window: both the working window and the source lattice's
        # own truncation treat beyond-edge mass as guaranteed exceedance
        lat_top = F.offset + F.log_mass.size - 1 if F.log_overflow > NEG_INF else None
        cands = [v for v in (self.hi_idx, lat_top) if v is not None]
        self._edge_idx = min(cands) if cands else None

    def valid_to(self, n: int) -> float:
        if self._edge_idx is None:
            return math.inf
        return (self._edge_idx + (n - 1) * min(0, self.F.offset)) * self.step

    def _compose(self, a: _State, b: _State) -> _State:
        out_len = a.log_mass.size + b.log_mass.size - 1
        if out_len > self.cell_budget:
            raise ResourceBudgetError(
                f"convolution needs {out_len} cells, budget is {self.cell_budget}")
        lm = log_convolve(a.log_mass, b.log_mass)
        off = a.offset + b.offset
        spill = NEG_INF
        if self.hi_idx is not None:
            keep = self.hi_idx - off + 1
            if keep < lm.size:
                spill = log_sum(lm[max(keep, 0):])
                lm = lm[:keep] if keep > 0 else np.array([NEG_INF])
        ov = _combined_overflow(a.log_overflow, b.log_overflow, spill)
        return _State(off, lm, ov)

    def _pow2_state(self, j: int) -> _State:
        while len(self._pow2) <= j:
            s = self._pow2[-1]
            self._pow2.append(self._compose(s, s))
        return self._pow2[j]

    def power(self, n: int) -> _State:
        if n < 1:
            raise InapplicableError("convolution power needs n >= 1")
        acc = None
        j = 0
        while n:
            if n & 1:
                s = self._pow2_state(j)
                acc = s if acc is None else self._compose(acc, s)
            n >>= 1
            j += 1
        return acc

    def sequential(self, n_max: int):
        """Yield (n, state of S_n) for n = 1..n_max, one convolution per step."""
        cur = self._base
        yield 1, cur
        for n in range(2, n_max + 1):
            cur = self._compose(cur, self._base)
            yield n, cur

    def tail_grid(self, arg) -> TailGrid:
        """TailGrid of P{S_n > x} from a power index or a ready state."""
        if isinstance(arg, _State):
            state, n = arg, None
        else:
            n = int(arg)
            state = self.power(n)
        lt = log_tail_from_mass(state.log_mass, state.log_overflow)
        valid = self.valid_to(n) if n is not None else math.inf
        return TailGrid(x_start=state.offset * self.step, step=self.step,
                        log_tail=lt, overflow_log_mass=state.log_overflow,
                        valid_to=valid)

    def state_tail(self, state: _State, n: int) -> TailGrid:
        lt = log_tail_from_mass(state.log_mass, state.log_overflow)
        return TailGrid(state.offset * self.step, self.step, lt,
                        state.log_overflow, self.valid_to(n))


def window_for(F: LatticeDistribution, n_max: int, x_max: float) -> float:
    """Window end that certifies exact tails at all x <= x_max up to n_max."""
    drop = max(0.0, -F.offset * F.step)
    return x_max + n_max * drop + 2 * F.step


# ---------------------------------------------------------------------------
# operations


def conv_power_tail(F: LatticeDistribution, n: int, x_hi: float | None = None,
                    cell_budget: int = CELL_BUDGET) -> TailGrid:
    """Exact P{S_n > x} on the lattice grid (binary powering, log domain)."""
    if n < 1:
        raise InapplicableError("n must be >= 1")
    powers = LatticePowers(F, x_hi, cell_budget)
    return powers.tail_grid(n)


def max_partial_sum_tail(F: LatticeDistribution, n: int, x_hi: float | None = None,
                         snapshots: tuple[int, ...] | None = None,
                         cell_budget: int = CELL_BUDGET):
    """Exact P{M_n > x}, M_n the running maximum of partial sums (S_0 = 0).

    Computed through the dual recursion W_{k+1} = max(W_k + xi, 0), whose
    final value has the law of M_n; each step is one lattice convolution, a
    clamp of negative cells to the origin, and absorption of mass beyond the
    window (sound and exact for x <= valid_to, as above).  With ``snapshots``
    a dict {k: TailGrid} for the requested k values is returned from a single
    pass.
    """
    if n < 1:
        raise InapplicableError("n must be >= 1")
    if x_hi is None:
        top = (F.offset + F.log_mass.size - 1) * F.step
        x_hi = max(top, 0.0) * n + F.step
    powers = LatticePowers(F, x_hi, cell_budget)
    fstate = powers._base
    hi_idx = powers.hi_idx
    state = _State(0, np.array([0.0]), NEG_INF)  # W_0 = 0
    want = set(snapshots or ())
    out: dict[int, TailGrid] = {}
    for k in range(1, n + 1):
        raw = powers._compose(state, fstate)
        lm, off = raw.log_mass, raw.offset
        if off < 0:
            lump = log_sum(lm[: -off]) if -off <= lm.size else log_sum(lm)
            rest = lm[-off:] if -off < lm.size else np.array([NEG_INF])
            lm = np.concatenate(([float(np.logaddexp(lump, rest[0] if rest.size else NEG_INF))],
                                 rest[1:]))
            off = 0
        state = _State(off, lm, raw.log_overflow)
        if k in want:
            out[k] = _walk_tail(state, powers, k)
    if snapshots is not None:
        if n not in out:
            out[n] = _walk_tail(state, powers, n)
        return out
    return _walk_tail(state, powers, n)


def _walk_tail(state: _State, powers: LatticePowers, k: int) -> TailGrid:
    lt = log_tail_from_mass(state.log_mass, state.log_overflow)
    valid = (powers._edge_idx + k * min(0, powers.F.offset)) * powers.step \
        if powers._edge_idx is not None else math.inf
    return TailGrid(state.offset * powers.step, powers.step, lt,
                    state.log_overflow, valid)


def integrated_tail_maxima_approx(F: Distribution, n: float, x: float) -> float:
    """Integrated-tail formula for P{M_n > x} under negative drift.

    Returns (1/|E xi|) * integral of the tail over [x, x + n|E xi|]; accepts
    n = inf for the all-time supremum.  Always <= n * tail(x).
    """
    mu = F.mean()
    if mu >= 0:
        raise InapplicableError("maxima approximation requires a negative mean")
    b = math.inf if math.isinf(n) else x + n * abs(mu)
    return F.integrated_tail(x, b) / abs(mu)


def kesten_ratio_table(F: LatticeDistribution, n_max: int, x_grid,
                       x_hi: float | None = None, n_list=None,
                       cell_budget: int = CELL_BUDGET) -> RatioDiagnostic:
    """Per-n supremum over the x-grid of P{S_n > x} / tail(x)."""
    xs = np.asarray(x_grid, dtype=float)
    if x_hi is None:
        x_hi = window_for(F, n_max, float(np.max(xs)))
    powers = LatticePowers(F, x_hi, cell_budget)
    log_f = np.asarray(F.log_tail(xs), dtype=float)
    if np.any(log_f == NEG_INF):
        raise InapplicableError("increment tail vanishes on the grid")
    wanted = set(int(n) for n in (n_list if n_list is not None else range(1, n_max + 1)))
    points = []
    for n, state in powers.sequential(max(wanted)):
        if n not in wanted:
            continue
        grid = powers.state_tail(state, n)
        ratios = np.exp(grid.log_tail_at(xs) - log_f)
        k = int(np.argmax(ratios))
        points.append(RatioPoint(x=float(xs[k]), n=n, ratio=float(ratios[k])))
    return _bounded_diag(points)


def _bounded_diag(points: list[RatioPoint]) -> RatioDiagnostic:
    # uniform-bound tables always carry their supremum; stability under grid
    # extension is the caller's check, not a trend verdict
    sup = max(p.ratio for p in points)
    return RatioDiagnostic(points=points, verdict=Verdict("bounded_by", sup=sup),
                           target=None)


def bound_check_negative_mean(F: LatticeDistribution, n_max: int, x_grid,
                              x_hi: float | None = None, n_list=None,
                              cell_budget: int = CELL_BUDGET) -> RatioDiagnostic:
    """Estimate the constant in the linear-in-n uniform bound (negative mean).

    Reports per-n sup over the grid of P{S_n > x} / (n tail(x)); the verdict
    carries the overall supremum K-hat.
    """
    if F.mean() >= 0:
        raise InapplicableError("negative-mean bound check requires E xi < 0")
    table = kesten_ratio_table(F, n_max, x_grid, x_hi, n_list, cell_budget)
    points = [RatioPoint(p.x, p.n, p.ratio / p.n) for p in table.points]
    return _bounded_diag(points)


def bound_check_nonneg_mean(F: LatticeDistribution, c: float, n_max: int, x_grid,
                            x_hi: float | None = None, n_list=None,
                            cell_budget: int = CELL_BUDGET) -> RatioDiagnostic:
    """Check the scaled uniform bound for nonnegative mean: sup of ratio*tail(cn)."""
    mu = F.mean()
    if mu < 0:
        raise InapplicableError("nonnegative-mean bound check requires E xi >= 0")
    if c <= mu:
        raise InapplicableError(f"need c > E xi = {mu:g}")
    xs = np.asarray(x_grid, dtype=float)
    if x_hi is None:
        x_hi = max(window_for(F, n_max, float(np.max(xs))), c * n_max + F.step)
    powers = LatticePowers(F, x_hi, cell_budget)
    log_f = np.asarray(F.log_tail(xs), dtype=float)
    wanted = set(int(n) for n in (n_list if n_list is not None else range(1, n_max + 1)))
    points = []
    for n, state in powers.sequential(max(wanted)):
        if n not in wanted:
            continue
        grid = powers.state_tail(state, n)
        scaled = np.exp(grid.log_tail_at(xs) - log_f + float(F.log_tail(c * n)))
        k = int(np.argmax(scaled))
        points.append(RatioPoint(x=float(xs[k]), n=n, ratio=float(scaled[k])))
    return _bounded_diag(points)


def big_jump_range_check(F: LatticeDistribution, h, x_grid, variant: str = "two_sided",
                         x_hi: float | None = None,
                         cell_budget: int = CELL_BUDGET) -> RatioDiagnostic:
    """Worst deviation of P{S_n > x} from n*tail(x) over the big-jump n-range.

    ``variant='two_sided'`` scans n <= h(x) and records max |ratio/n - 1|;
    ``variant='lower'`` scans n <= h(x)^2 and records max (1 - ratio/n), the
    one-sided shortfall.  Points carry the deviation in the ratio field.
    """
    if variant not in ("two_sided", "lower"):
        raise InapplicableError(f"unknown variant {variant!r}")
    xs = np.sort(np.asarray(x_grid, dtype=float))
    n_of_x = {float(x): max(1, int(math.floor(h(float(x))))) for x in xs}
    if variant == "lower":
        n_of_x = {x: n * n for x, n in n_of_x.items()}
    n_top = max(n_of_x.values())
    if x_hi is None:
        x_hi = window_for(F, n_top, float(np.max(xs)))
    powers = LatticePowers(F, x_hi, cell_budget)
    log_f = np.asarray(F.log_tail(xs), dtype=float)
    worst = {x: (0.0, 1) for x in n_of_x}
    for n, state in powers.sequential(n_top):
        grid = powers.state_tail(state, n)
        ratios = np.exp(grid.log_tail_at(xs) - log_f) / n
        for x, r in zip(xs, ratios):
            x = float(x)
            if n > n_of_x[x]:
                continue
            dev = abs(r - 1.0) if variant == "two_sided" else max(0.0, 1.0 - r)
            if dev > worst[x][0]:
                worst[x] = (dev, n)
    points = [RatioPoint(x=x, n=worst[x][1], ratio=worst[x][0]) for x in map(float, xs)]
    return RatioDiagnostic.from_ratios(points, target=0.0, tolerance=0.15)


# ---------------------------------------------------------------------------
# optional binary cache (results never depend on its presence)


def cached_conv_power(F: LatticeDistribution, n: int, x_hi: float,
                      cache_dir, cell_budget: int = CELL_BUDGET) -> TailGrid:
    """conv_power_tail with an npz cache keyed by (spec hash, n, step, window)."""
    key = hashlib.sha256(
        f"{F.spec_string()}|{n}|{F.step:.17g}|{x_hi:.17g}".encode()).hexdigest()[:32]
    path = Path(cache_dir) / f"convpow_{key}.npz"
    if path.exists():
        z = np.load(path)
        return TailGrid(float(z["x_start"]), float(z["step"]), z["log_tail"],
                        float(z["overflow"]), float(z["valid_to"]))
    grid = conv_power_tail(F, n, x_hi, cell_budget)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, x_start=grid.x_start, step=grid.step, log_tail=grid.log_tail,
             overflow=grid.overflow_log_mass, valid_to=grid.valid_to)
    tmp.replace(path)
    return grid
