"""Seeded Monte Carlo for stopped sums, stopped maxima, and branching tails.

Plain indicator estimators only: heavy tails put the target events within
reach of cheap paths, so there is no importance sampling and no estimator
bias to argue about.  Samples are drawn in batches; each batch owns a
counter-based stream keyed by (seed, batch index), and batch results are
reduced by exact integer counting, so totals do not depend on scheduling.

Stopping rules are folds over the path prefix: the rule sees only
(step index, running sum, current increment), which enforces "no access to
the future" structurally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dist import Distribution, make_stream
from .errors import InapplicableError, ValidationError
from .stopped import CountingDistribution

__all__ = [
    "StoppingRule", "Estimate", "simulate_stopped_sum", "simulate_gw",
    "compare_exact", "BATCH_SIZE",
]

BATCH_SIZE = 1 << 20
STEP_CAP = 10**6


@dataclass(frozen=True)
class StoppingRule:
    """One of the supported stopping mechanisms for the path fold."""

    kind: str
    tau: CountingDistribution | None = None
    threshold: float = 0.0
    cap: int = 1
    beta: float = 0.5

    @classmethod
    def independent(cls, tau: CountingDistribution) -> "StoppingRule":
        return cls(kind="independent", tau=tau)

    @classmethod
    def bounded_first_exceed(cls, threshold: float, cap: int) -> "StoppingRule":
        if cap < 1:
            raise ValidationError("bounded rule needs cap >= 1")
        return cls(kind="bounded_first_exceed", threshold=threshold, cap=cap)

    @classmethod
    def first_nonpositive(cls) -> "StoppingRule":
        return cls(kind="first_nonpositive")

    @classmethod
    def h_of_first_increment(cls, beta: float) -> "StoppingRule":
        if not 0 < beta < 1:
            raise ValidationError("window exponent must lie in (0, 1)")
        return cls(kind="h_of_first_increment", beta=beta)

    def spec_string(self) -> str:
        if self.kind == "independent":
            return "independent"
        if self.kind == "bounded_first_exceed":
            return f"bounded_first_exceed a={self.threshold:g} cap={self.cap}"
        if self.kind == "h_of_first_increment":
            return f"h_of_first_increment beta={self.beta:g}"
        return self.kind


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate; the standard error is binomial for indicators."""

    value: float
    std_error: float
    samples: int
    seed: int
    kind: str = "probability"
    breaches: int = 0

    def __post_init__(self):
        if self.kind == "probability" and not 0.0 <= self.value <= 1.0:
            raise ValidationError("probability estimate outside [0, 1]")

    @property
    def valid(self) -> bool:
        return self.breaches <= 1e-3 * self.samples


def compare_exact(estimate: Estimate, exact: float) -> float:
    """Standardised deviation (value - exact) / SE of a seeded estimate."""
    if not 0.0 <= exact <= 1.0:
        raise ValidationError("exact probability must lie in [0, 1]")
    if estimate.std_error <= 0.0:
        raise InapplicableError("zero standard error; z-score undefined")
    return (estimate.value - exact) / estimate.std_error


def _indicator_estimate(hits: int, n: int, seed: int, breaches: int = 0) -> Estimate:
    p = hits / n
    return Estimate(value=p, std_error=math.sqrt(p * (1 - p) / n), samples=n,
                    seed=seed, breaches=breaches)


def _segment_stats(first: np.ndarray | None, lengths: np.ndarray, draws: np.ndarray):
    """Per-path sum and running max for variable-length increment segments.

    ``first`` optionally holds an increment already consumed (the rule peeked
    at it); ``lengths`` are the remaining segment lengths, ``draws`` the
    concatenated remaining increments.  The running max includes the empty
    prefix (zero) and, when present, the first increment.
    """
    m = lengths.size
    ends = np.cumsum(lengths)
    starts = ends - lengths
    cp = np.concatenate(([0.0], np.cumsum(draws)))
    seg_sum = cp[ends] - cp[starts]
    seg_max = np.zeros(m)
    nz = lengths > 0
    if nz.any():
        # nonzero segments tile the draws array, so reduceat on their starts
        # yields each segment's running-prefix maximum of the global cumsum
        red = np.maximum.reduceat(cp[1:], starts[nz])
        seg_max[nz] = red - cp[starts[nz]]
    base = np.zeros(m) if first is None else first
    s = base + seg_sum
    run_max = np.maximum(0.0, base)          # max(S_0, S_1-with-first)
    run_max = np.maximum(run_max, base + seg_max)
    return s, run_max


def simulate_stopped_sum(F: Distribution, rule: StoppingRule, x, samples: int,
                         seed: int, batch_size: int = BATCH_SIZE,
                         step_cap: int = STEP_CAP):
    """Joint estimates of P{S_tau > x}, P{M_tau > x}, and E tau on shared paths.

    ``x`` may be a scalar or a grid; indicator counts for every x come from
    the same simulated paths, so the maximum estimate dominates the sum
    estimate pathwise, not just on average.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    hit_s = np.zeros(xs.size, dtype=np.int64)
    hit_m = np.zeros(xs.size, dtype=np.int64)
    tau_sum = 0
    tau_sumsq = 0
    breaches = 0
    done = 0
    batch_idx = 0
    while done < samples:
        m = min(batch_size, samples - done)
        rng = make_stream(seed, batch_idx + 1)
        s, run_max, taus, br = _run_batch(F, rule, m, rng, step_cap)
        hit_s += (s[None, :] > xs[:, None]).sum(axis=1)
        hit_m += (run_max[None, :] > xs[:, None]).sum(axis=1)
        tau_sum += int(taus.sum())
        tau_sumsq += int((taus.astype(np.int64) ** 2).sum())
        breaches += br
        done += m
        batch_idx += 1
    est_s = [_indicator_estimate(int(h), samples, seed, breaches) for h in hit_s]
    est_m = [_indicator_estimate(int(h), samples, seed, breaches) for h in hit_m]
    tau_mean = tau_sum / samples
    tau_var = max(tau_sumsq / samples - tau_mean**2, 0.0)
    est_tau = Estimate(value=tau_mean, std_error=math.sqrt(tau_var / samples),
                       samples=samples, seed=seed, kind="mean", breaches=breaches)
    if np.ndim(x) == 0:
        return est_s[0], est_m[0], est_tau
    return est_s, est_m, est_tau


def _run_batch(F: Distribution, rule: StoppingRule, m: int,
               rng: np.random.Generator, step_cap: int):
    if rule.kind == "independent":
        taus, br = _sample_counts(rule.tau, rng, m)
        draws = F.sample(rng, int(taus.sum()))
        s, run_max = _segment_stats(None, taus, draws)
        return s, run_max, taus, br

    if rule.kind == "h_of_first_increment":
        from .pathological import stopping_count_window
        xi1 = F.sample(rng, m)
        taus = np.array([stopping_count_window(2.0 * v, rule.beta) for v in xi1],
                        dtype=np.int64) + 1
        br = int((taus > step_cap).sum())
        taus = np.minimum(taus, step_cap)
        draws = F.sample(rng, int((taus - 1).sum()))
        s, run_max = _segment_stats(xi1, taus - 1, draws)
        return s, run_max, taus, br

    if rule.kind in ("bounded_first_exceed", "first_nonpositive"):
        cap = rule.cap if rule.kind == "bounded_first_exceed" else step_cap
        s = np.zeros(m)
        run_max = np.zeros(m)
        taus = np.zeros(m, dtype=np.int64)
        active = np.arange(m)
        n = 0
        while active.size and n < cap:
            n += 1
            xi = F.sample(rng, active.size)
            s[active] += xi
            run_max[active] = np.maximum(run_max[active], s[active])
            if rule.kind == "bounded_first_exceed":
                stopped = s[active] > rule.threshold
            else:
                stopped = s[active] <= 0.0
            taus[active[stopped]] = n
            active = active[~stopped]
        br = int(active.size)
        taus[active] = n  # capped paths
        if rule.kind == "bounded_first_exceed":
            taus[taus == 0] = cap
            br = 0
        return s, run_max, taus, br

    raise ValidationError(f"unknown stopping rule {rule.kind!r}")


def _sample_counts(tau: CountingDistribution, rng: np.random.Generator, m: int):
    cum = np.cumsum(np.exp(tau.log_mass))
    u = rng.random(m)
    idx = np.searchsorted(cum, u, side="right")
    breaches = int((idx > tau.n_cap).sum())
    return np.minimum(idx, tau.n_cap).astype(np.int64), breaches


def simulate_gw(offspring: Distribution, generations: int, x: float, samples: int,
                seed: int, batch_size: int = BATCH_SIZE,
                pop_cap: int = 10**8, draw_chunk: int = 10**7) -> Estimate:
    """Indicator estimate of P{X_gen > x} for a branching process.

    Paths whose population passes ``pop_cap`` (or whose draw demand passes
    the per-batch chunk) are counted as exceedances and as breaches: sound
    one-sided accounting for any queried x below the cap.
    """
    if generations < 1:
        raise InapplicableError("generations must be >= 1")
    hits = 0
    breaches = 0
    done = 0
    batch_idx = 0
    while done < samples:
        m = min(batch_size, samples - done)
        rng = make_stream(seed, batch_idx + 1)
        pop = np.ones(m, dtype=np.int64)
        ceiling = np.zeros(m, dtype=bool)
        for _ in range(generations):
            alive = (pop > 0) & ~ceiling
            total = int(pop[alive].sum())
            if total > draw_chunk:
                # cap the hungriest paths; they count as exceedances anyway
                ai = np.flatnonzero(alive)
                order = np.argsort(pop[ai])
                csum = np.cumsum(pop[ai][order])
                drop = ai[order[np.searchsorted(csum, draw_chunk, side="right"):]]
                ceiling[drop] = True
                alive[drop] = False
                total = int(pop[alive].sum())
            draws = offspring.sample(rng, total)
            lengths = pop[alive]
            ends = np.cumsum(lengths)
            starts = ends - lengths
            cp = np.concatenate(([0], np.cumsum(draws.astype(np.int64))))
            new = cp[ends] - cp[starts]
            pop = pop.copy()
            pop[alive] = new
            over = pop > pop_cap
            ceiling |= over
        exceed = ceiling | (pop > x)
        hits += int(exceed.sum())
        breaches += int(ceiling.sum())
        done += m
        batch_idx += 1
    return _indicator_estimate(hits, samples, seed, breaches)
