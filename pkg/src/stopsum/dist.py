"""Heavy-tailed (and light-tailed control) distributions with exact tails.

Two exact representations carry all computations:

* piecewise-linear hazard functions (continuous laws; the tail is
  ``exp(-R(x))`` with R piecewise linear, so tails, means, and integrated
  tails all have closed forms per segment), and
* lattices (log-domain mass on an integer-spaced grid), produced by
  ``discretize`` and consumed by the convolution machinery.

Closed-form families (Pareto, Weibull, log-normal, exponential) are provided
for oracles and sampling.  All objects are immutable after construction and
all randomness flows through explicit counter-based streams from
``make_stream``.
"""

from __future__ import annotations

import math
import re

import numpy as np
from scipy import special

from .errors import DivergenceError, InapplicableError, ValidationError
from .logspace import NEG_INF, log1mexp, log_sum, log_tail_from_mass

__all__ = [
    "Distribution", "Pareto", "Weibull", "LogNormal", "Exponential",
    "HazardDistribution", "ShiftedDistribution", "LatticeDistribution",
    "discretize", "hazard_approximation", "parse_spec", "make_stream",
]


def make_stream(seed: int, index: int = 0) -> np.random.Generator:
    """Counter-based random stream keyed by a 64-bit seed and a split index."""
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), index]))


class Distribution:
    """Common query surface; subclasses must be immutable after construction."""

    #: infimum of {x : P{X > x} < 1}
    support_start: float

    def log_tail(self, x):
        raise NotImplementedError

    def tail(self, x):
        """P{X > x}; equals 1 below the support start."""
        return np.exp(self.log_tail(x))

    def mean(self) -> float:
        """E X.  Computed as support_start + integral of the tail above it."""
        return self.support_start + self.integrated_tail(self.support_start, math.inf)

    def integrated_tail(self, a: float, b: float) -> float:
        """Integral of the tail function over [a, b] (b may be inf)."""
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, size: int):
        """Inverse-transform draws; deterministic given the stream state."""
        raise NotImplementedError

    def hazard_rate(self, x: float) -> float:
        """Left limit of d/dx(-ln tail) at x, where defined."""
        raise InapplicableError(f"{type(self).__name__} has no hazard rate")

    def spec_string(self) -> str:
        raise NotImplementedError

    def _below_support(self, a: float, b: float) -> tuple[float, float]:
        """Split [a, b]: return (length where tail==1, clipped lower end)."""
        s = self.support_start
        if a >= s:
            return 0.0, a
        return min(b, s) - a, s


class Pareto(Distribution):
    """P{X > x} = (x / xm)^-alpha for x >= xm."""

    def __init__(self, alpha: float, xm: float = 1.0):
        if alpha <= 0 or xm <= 0:
            raise ValidationError("pareto requires alpha > 0 and xm > 0")
        self.alpha = float(alpha)
        self.xm = float(xm)
        self.support_start = self.xm

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            lt = np.where(x <= self.xm, 0.0, -self.alpha * np.log(x / self.xm))
        return lt if lt.ndim else float(lt)

    def mean(self) -> float:
        if self.alpha <= 1:
            raise DivergenceError("pareto mean diverges for alpha <= 1")
        return self.alpha * self.xm / (self.alpha - 1)

    def integrated_tail(self, a: float, b: float) -> float:
        head, a = self._below_support(a, b)
        if b <= a:
            return head
        al, xm = self.alpha, self.xm
        if math.isinf(b) and al <= 1:
            raise DivergenceError("integrated pareto tail diverges for alpha <= 1")
        if al == 1.0:
            return head + xm * math.log(b / a)
        hi = 0.0 if math.isinf(b) else b ** (1 - al)
        return head + xm**al * (hi - a ** (1 - al)) / (1 - al)

    def sample(self, rng, size):
        return self.xm * rng.random(size) ** (-1.0 / self.alpha)

    def hazard_rate(self, x: float) -> float:
        return 0.0 if x <= self.xm else self.alpha / x

    def spec_string(self) -> str:
        return f"pareto alpha={self.alpha:.17g} xm={self.xm:.17g}"


class Weibull(Distribution):
    """P{X > x} = exp(-(x / scale)^beta) for x >= 0."""

    def __init__(self, beta: float, scale: float = 1.0):
        if beta <= 0 or scale <= 0:
            raise ValidationError("weibull requires beta > 0 and scale > 0")
        self.beta = float(beta)
        self.scale = float(scale)
        self.support_start = 0.0

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        lt = np.where(x <= 0, 0.0, -((np.maximum(x, 0.0) / self.scale) ** self.beta))
        return lt if lt.ndim else float(lt)

    def mean(self) -> float:
        return self.scale * math.gamma(1 + 1 / self.beta)

    def integrated_tail(self, a: float, b: float) -> float:
        head, a = self._below_support(a, b)
        if b <= a:
            return head
        inv = 1.0 / self.beta
        ua = (a / self.scale) ** self.beta
        ub = math.inf if math.isinf(b) else (b / self.scale) ** self.beta
        lo = special.gammainc(inv, ua)
        hi = 1.0 if math.isinf(b) else special.gammainc(inv, ub)
        return head + self.scale * inv * math.gamma(inv) * (hi - lo)

    def sample(self, rng, size):
        return self.scale * (-np.log(rng.random(size))) ** (1.0 / self.beta)

    def hazard_rate(self, x: float) -> float:
        if x <= 0:
            return 0.0
        return (self.beta / self.scale) * (x / self.scale) ** (self.beta - 1)

    def spec_string(self) -> str:
        return f"weibull beta={self.beta:.17g} scale={self.scale:.17g}"


class LogNormal(Distribution):
    """ln X ~ N(mu, sigma^2)."""

    def __init__(self, mu: float, sigma: float):
        if sigma <= 0:
            raise ValidationError("lognormal requires sigma > 0")
        self.mu = float(mu)
        self.sigma = float(sigma)
        self.support_start = 0.0

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        z = np.where(x <= 0, -np.inf, (np.log(np.maximum(x, 1e-300)) - self.mu) / self.sigma)
        lt = special.log_ndtr(-z)
        return lt if lt.ndim else float(lt)

    def mean(self) -> float:
        return math.exp(self.mu + self.sigma**2 / 2)

    def _tail_integral_from(self, x: float) -> float:
        # integral of the tail over [x, inf): E[X; X>x] - x P{X>x}
        if x <= 0:
            return self.mean() - x
        z = (math.log(x) - self.mu) / self.sigma
        return self.mean() * special.ndtr(-(z - self.sigma)) - x * math.exp(
            special.log_ndtr(-z))

    def integrated_tail(self, a: float, b: float) -> float:
        lo = self._tail_integral_from(a)
        hi = 0.0 if math.isinf(b) else self._tail_integral_from(b)
        return lo - hi

    def sample(self, rng, size):
        return np.exp(self.mu + self.sigma * special.ndtri(rng.random(size)))

    def hazard_rate(self, x: float) -> float:
        if x <= 0:
            return 0.0
        z = (math.log(x) - self.mu) / self.sigma
        log_pdf = -0.5 * z * z - math.log(x * self.sigma * math.sqrt(2 * math.pi))
        return math.exp(log_pdf - special.log_ndtr(-z))

    def spec_string(self) -> str:
        return f"lognormal mu={self.mu:.17g} sigma={self.sigma:.17g}"


class Exponential(Distribution):
    """P{X > x} = exp(-lam x) for x >= 0; light-tailed control case."""

    def __init__(self, lam: float):
        if lam <= 0:
            raise ValidationError("exponential requires lam > 0")
        self.lam = float(lam)
        self.support_start = 0.0

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        lt = np.where(x <= 0, 0.0, -self.lam * np.maximum(x, 0.0))
        return lt if lt.ndim else float(lt)

    def mean(self) -> float:
        return 1.0 / self.lam

    def integrated_tail(self, a: float, b: float) -> float:
        head, a = self._below_support(a, b)
        if b <= a:
            return head
        hi = 0.0 if math.isinf(b) else math.exp(-self.lam * b)
        return head + (math.exp(-self.lam * a) - hi) / self.lam

    def sample(self, rng, size):
        return -np.log(rng.random(size)) / self.lam

    def hazard_rate(self, x: float) -> float:
        return self.lam if x > 0 else 0.0

    def spec_string(self) -> str:
        return f"exponential lam={self.lam:.17g}"


class HazardDistribution(Distribution):
    """Continuous law defined by a piecewise-linear hazard function R.

    ``knots`` are the segment endpoints (the first is the support start, where
    R must vanish), ``values`` the hazard at the knots, and ``final_slope``
    the constant hazard rate used beyond the last knot.  The tail is exactly
    ``exp(-R(x))`` everywhere.
    """

    def __init__(self, knots, values, final_slope: float):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 1:
            raise ValidationError("knots and values must be 1-D and equally long")
        if knots.size > 1 and not np.all(np.diff(knots) > 0):
            raise ValidationError("knots must be strictly increasing")
        if values[0] != 0.0:
            raise ValidationError("hazard must vanish at the first knot")
        if np.any(np.diff(values) < 0) or final_slope < 0:
            raise ValidationError("hazard must be nondecreasing")
        self.knots = knots
        self.values = values
        self.final_slope = float(final_slope)
        self.slopes = (np.diff(values) / np.diff(knots)) if knots.size > 1 else np.empty(0)
        self.support_start = float(knots[0])

    def hazard(self, x):
        """R(x), vectorized; 0 below the support, linear extrapolation beyond."""
        x = np.asarray(x, dtype=float)
        r = np.interp(x, self.knots, self.values)
        beyond = x > self.knots[-1]
        if np.any(beyond):
            r = np.where(beyond, self.values[-1] + self.final_slope * (x - self.knots[-1]), r)
        return r if r.ndim else float(r)

    def log_tail(self, x):
        h = self.hazard(x)
        return -h

    def hazard_rate(self, x: float) -> float:
        if x <= self.knots[0]:
            return 0.0
        if x > self.knots[-1]:
            return self.final_slope
        # left-limit convention: segment (k_i, k_{i+1}] owns its right endpoint
        i = int(np.searchsorted(self.knots, x, side="left")) - 1
        return float(self.slopes[i])

    def _segments(self, a: float, b: float):
        """Yield (lo, hi, R_lo, slope) pieces covering [a, b] above the support."""
        ks = self.knots
        edges = [a]
        inner = ks[(ks > a) & (ks < b)]
        edges.extend(inner.tolist())
        edges.append(b)
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi <= lo:
                continue
            if lo >= ks[-1]:
                slope = self.final_slope
            else:
                i = int(np.searchsorted(ks, lo, side="right")) - 1
                slope = float(self.slopes[i]) if i < self.slopes.size else self.final_slope
            yield lo, hi, float(self.hazard(lo)), slope

    def integrated_tail(self, a: float, b: float) -> float:
        head, a = self._below_support(a, b)
        if b <= a:
            return head
        if math.isinf(b) and self.final_slope == 0.0:
            raise DivergenceError("tail integral diverges: final hazard slope is 0")
        total = head
        for lo, hi, r_lo, slope in self._segments(a, b):
            width = hi - lo
            if slope == 0.0:
                log_piece = -r_lo + math.log(width)
            elif math.isinf(width):
                log_piece = -r_lo - math.log(slope)
            else:
                log_piece = -r_lo + float(log1mexp(-slope * width)) - math.log(slope)
            total += math.exp(log_piece)
        return total

    def sample(self, rng, size):
        if self.final_slope == 0.0:
            raise DivergenceError("cannot sample: final hazard slope is 0")
        e = -np.log(rng.random(size))
        x = np.interp(e, self.values, self.knots)
        beyond = e > self.values[-1]
        if np.any(beyond):
            x = np.where(beyond, self.knots[-1] + (e - self.values[-1]) / self.final_slope, x)
        return x

    def spec_string(self) -> str:
        ks = ",".join(f"{k:.17g}" for k in self.knots)
        vs = ",".join(f"{v:.17g}" for v in self.values)
        return f"hazard knots=[{ks}] values=[{vs}] final_slope={self.final_slope:.17g}"


class ShiftedDistribution(Distribution):
    """Law of X + shift for X ~ base; tail(x) = base.tail(x - shift)."""

    def __init__(self, base: Distribution, shift: float):
        self.base = base
        self.shift = float(shift)
        self.support_start = base.support_start + self.shift

    def log_tail(self, x):
        x = np.asarray(x, dtype=float) - self.shift
        return self.base.log_tail(x if x.ndim else float(x))

    def mean(self) -> float:
        return self.base.mean() + self.shift

    def integrated_tail(self, a: float, b: float) -> float:
        return self.base.integrated_tail(a - self.shift,
                                         b if math.isinf(b) else b - self.shift)

    def sample(self, rng, size):
        return self.base.sample(rng, size) + self.shift

    def hazard_rate(self, x: float) -> float:
        return self.base.hazard_rate(x - self.shift)

    def spec_string(self) -> str:
        return f"shift base=({self.base.spec_string()}) by={self.shift:.17g}"


class LatticeDistribution(Distribution):
    """Probability mass on the grid offset*step, (offset+1)*step, ...

    Masses are stored as log-probabilities.  ``log_overflow`` is residual mass
    beyond the last grid point (flagged by ``discretize`` when a tail had to
    be truncated); it is treated as sitting just past the grid end.
    """

    def __init__(self, offset: int, step: float, log_mass, log_overflow: float = NEG_INF,
                 *, normalize: bool = False, _tol: float = 1e-9):
        if step <= 0:
            raise ValidationError("step must be positive")
        lm = np.asarray(log_mass, dtype=float).copy()
        if lm.size == 0:
            raise ValidationError("empty lattice")
        # normal form: no empty leading/trailing cells
        finite = np.isfinite(lm)
        if not finite.any():
            raise ValidationError("lattice has no mass")
        first, last = np.argmax(finite), lm.size - 1 - np.argmax(finite[::-1])
        lm = lm[first:last + 1]
        offset += int(first)
        total = np.logaddexp(log_sum(lm), log_overflow)
        if normalize:
            lm -= total
            if log_overflow > NEG_INF:
                log_overflow -= total
        elif abs(math.expm1(total)) > _tol:
            raise ValidationError(f"lattice mass is off by {math.expm1(total):.2e}")
        self.offset = int(offset)
        self.step = float(step)
        self.log_mass = lm
        self.log_overflow = float(log_overflow)
        self._log_tail_grid = log_tail_from_mass(lm, log_overflow)
        self.support_start = self.offset * self.step

    @classmethod
    def from_probs(cls, offset: int, step: float, probs, **kw) -> "LatticeDistribution":
        with np.errstate(divide="ignore"):
            return cls(offset, step, np.log(np.asarray(probs, dtype=float)), **kw)

    @classmethod
    def from_dict(cls, mass: dict[float, float], step: float | None = None):
        """Build from {point: probability}; points must share a common grid."""
        pts = np.array(sorted(mass))
        if step is None:
            g = 0.0
            for v in np.abs(pts):  # float gcd over the points
                v = float(v)
                while v > 1e-9:
                    g, v = v, math.fmod(g, v)
            step = g or 1.0
        idx = np.rint(pts / step).astype(int)
        if not np.allclose(idx * step, pts, rtol=0, atol=1e-9 * step):
            raise ValidationError("points do not sit on a common lattice")
        offset = int(idx[0])
        probs = np.zeros(idx[-1] - idx[0] + 1)
        for i, p in zip(idx, (mass[x] for x in sorted(mass))):
            probs[i - offset] = p
        return cls.from_probs(offset, step, probs)

    @property
    def points(self) -> np.ndarray:
        return (self.offset + np.arange(self.log_mass.size)) * self.step

    @property
    def grid_end(self) -> float:
        return (self.offset + self.log_mass.size - 1) * self.step

    def log_tail(self, x):
        x = np.asarray(x, dtype=float)
        idx = np.floor(x / self.step - self.offset + 1e-9).astype(int)
        idx = np.clip(idx, -1, self.log_mass.size - 1)
        grid = np.concatenate(([0.0], self._log_tail_grid))
        lt = grid[idx + 1]
        return lt if lt.ndim else float(lt)

    def mean(self) -> float:
        # overflow mass is lumped at the first point past the grid (one-sided:
        # underestimates the mean of the law the lattice was cut from)
        m = float(np.dot(np.exp(self.log_mass), self.points))
        if self.log_overflow > NEG_INF:
            m += math.exp(self.log_overflow) * (self.grid_end + self.step)
        return m

    def integrated_tail(self, a: float, b: float) -> float:
        if b <= a:
            return 0.0
        head, a = self._below_support(a, b)
        if b <= a:
            return head
        tail_vals = np.exp(self._log_tail_grid)
        pts = self.points
        # breakpoints of the step function inside (a, b)
        edges = np.concatenate(([a], pts[(pts > a) & (pts < b)], [b]))
        if math.isinf(b):
            if self.log_overflow > NEG_INF:
                raise DivergenceError("integrated tail to infinity with overflow mass")
            edges = edges[:-1]
            widths = np.diff(edges)
        else:
            widths = np.diff(edges)
        idx = np.clip(np.floor(edges[:-1] / self.step - self.offset + 1e-9).astype(int),
                      0, tail_vals.size - 1)
        return head + float(np.dot(widths, tail_vals[idx]))

    def sample(self, rng, size):
        cum = np.cumsum(np.exp(self.log_mass))
        u = rng.random(size)
        idx = np.searchsorted(cum, u, side="right")
        pts = np.concatenate((self.points, [self.grid_end + self.step]))
        return pts[np.minimum(idx, pts.size - 1)]

    def conditional_on_positive(self) -> "LatticeDistribution":
        """Conditional law on (0, inf); used by class diagnostics."""
        keep = self.points > 0
        if not keep.any():
            raise InapplicableError("no mass on the positive half-line")
        lm = np.where(keep, self.log_mass, NEG_INF)
        return LatticeDistribution(self.offset, self.step, lm,
                                   self.log_overflow, normalize=True)

    def spec_string(self) -> str:
        ms = ",".join(f"{math.exp(v):.17g}" for v in self.log_mass)
        return f"lattice step={self.step:.17g} offset={self.offset} mass=[{ms}]"


def discretize(d: Distribution, step: float, x_max: float) -> LatticeDistribution:
    """Project a continuous law onto a lattice, rounding values up to the grid.

    Cell (p_{k-1}, p_k] is assigned to its upper grid point, so the lattice
    tail dominates the continuous tail at every x (equality in exact
    arithmetic at grid points).  Residual mass beyond ``x_max`` goes to the
    flagged overflow cell.
    """
    if step <= 0:
        raise ValidationError("step must be positive")
    if x_max < d.support_start + step:
        raise ValidationError("x_max must leave room for at least one cell")
    base = d.base if isinstance(d, ShiftedDistribution) else d
    if isinstance(base, HazardDistribution) and base.knots.size > 1:
        if step > float(np.min(np.diff(base.knots))):
            raise ValidationError("step exceeds the shortest hazard segment (aliasing)")
    k0 = math.floor(d.support_start / step + 1e-12)
    n_cells = math.floor((x_max - k0 * step) / step + 1e-9)
    grid = (k0 + np.arange(n_cells + 1)) * step
    lt = np.asarray(d.log_tail(grid), dtype=float)
    lt[0] = 0.0  # grid[0] <= support start by construction
    with np.errstate(invalid="ignore"):
        lm = lt[:-1] + log1mexp(np.minimum(lt[1:] - lt[:-1], 0.0))
    lm[lt[1:] >= lt[:-1]] = NEG_INF
    return LatticeDistribution(k0 + 1, step, lm, log_overflow=float(lt[-1]))


def hazard_approximation(d: Distribution, x_max: float, points_per_decade: int = 200,
                         x_min: float | None = None) -> HazardDistribution:
    """Piecewise-linear hazard interpolant of a continuous law up to x_max.

    Knots are geometrically spaced above the support start; the hazard is
    exact at knots and chordal between them.  ``final_slope`` is the exact
    hazard rate at ``x_max`` so extrapolation continues the local decay.
    """
    s = d.support_start
    span = x_max - s
    if span <= 0:
        raise ValidationError("x_max must exceed the support start")
    lo = x_min - s if x_min is not None else min(1e-3, span * 1e-9)
    n = max(2, int(points_per_decade * math.log10(span / lo)))
    knots = s + np.concatenate(([0.0], np.geomspace(lo, span, n)))
    values = -np.asarray(d.log_tail(knots), dtype=float)
    values[0] = 0.0
    return HazardDistribution(knots, values, final_slope=d.hazard_rate(x_max))


# ---------------------------------------------------------------------------
# declarative spec strings


def _tokenize(text: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
            if depth < 0:
                raise ValidationError(f"unbalanced parentheses in spec: {text!r}")
        if ch.isspace() and depth == 0:
            if cur:
                out.append("".join(cur))
                cur = []
        else:
            cur.append(ch)
    if depth != 0:
        raise ValidationError(f"unbalanced parentheses in spec: {text!r}")
    if cur:
        out.append("".join(cur))
    return out


def _parse_kv(tokens: list[str], spec: str) -> dict[str, str]:
    kv = {}
    for tok in tokens:
        m = re.match(r"^([A-Za-z_][A-Za-z0-9_]*)=(.+)$", tok, flags=re.S)
        if not m:
            raise ValidationError(f"expected key=value, got {tok!r} in {spec!r}")
        kv[m.group(1)] = m.group(2)
    return kv


def _number(kv: dict[str, str], key: str, spec: str) -> float:
    if key not in kv:
        raise ValidationError(f"missing parameter {key!r} in {spec!r}")
    try:
        return float(kv[key])
    except ValueError as exc:
        raise ValidationError(f"bad number for {key!r} in {spec!r}") from exc


def _number_list(kv: dict[str, str], key: str, spec: str) -> np.ndarray:
    raw = kv.get(key, "")
    if not (raw.startswith("[") and raw.endswith("]")):
        raise ValidationError(f"parameter {key!r} must be a [list] in {spec!r}")
    body = raw[1:-1].strip()
    if not body:
        return np.empty(0)
    try:
        return np.array([float(v) for v in re.split(r"[,\s]+", body) if v])
    except ValueError as exc:
        raise ValidationError(f"bad list for {key!r} in {spec!r}") from exc


def parse_spec(spec: str) -> Distribution:
    """Parse a declarative distribution spec, e.g. ``pareto alpha=2 xm=1``."""
    tokens = _tokenize(spec.strip())
    if not tokens:
        raise ValidationError("empty distribution spec")
    kind, rest = tokens[0].lower(), tokens[1:]
    kv = _parse_kv(rest, spec) if kind != "shift" else None
    if kind == "pareto":
        return Pareto(_number(kv, "alpha", spec), _number(kv, "xm", spec))
    if kind == "weibull":
        scale = _number(kv, "scale", spec) if "scale" in kv else 1.0
        return Weibull(_number(kv, "beta", spec), scale)
    if kind == "lognormal":
        return LogNormal(_number(kv, "mu", spec), _number(kv, "sigma", spec))
    if kind == "exponential":
        return Exponential(_number(kv, "lam", spec))
    if kind == "hazard":
        return HazardDistribution(_number_list(kv, "knots", spec),
                                  _number_list(kv, "values", spec),
                                  _number(kv, "final_slope", spec))
    if kind == "lattice":
        probs = _number_list(kv, "mass", spec)
        return LatticeDistribution.from_probs(int(_number(kv, "offset", spec)),
                                              _number(kv, "step", spec), probs)
    if kind == "shift":
        kv = _parse_kv(rest, spec)
        base_raw = kv.get("base", "")
        if not (base_raw.startswith("(") and base_raw.endswith(")")):
            raise ValidationError(f"shift base must be parenthesised in {spec!r}")
        return ShiftedDistribution(parse_spec(base_raw[1:-1]), _number(kv, "by", spec))
    raise ValidationError(f"unknown distribution family {kind!r}")
