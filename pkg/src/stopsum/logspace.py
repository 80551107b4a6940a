"""Log-domain primitives: stable sums, differences, and exact lattice convolution.

Everything here operates on arrays of log-masses (entries may be ``-inf`` for
empty cells).  The convolution kernel is direct (no FFT): per-block maximum
extraction moves each block into a scaled linear domain where ``np.convolve``
does the arithmetic, and block results are accumulated against a running
per-output-block scale.  Iteration order is fixed, so results are reproducible
bit for bit.
"""

from __future__ import annotations

import numpy as np

NEG_INF = float("-inf")

# exp(x) is exactly 0.0 below this, so skipping such contributions cannot
# change any output bit
_UNDERFLOW_LOG = -766.0

# per-block log-range budget; two blocks convolved stack their ranges, so
# this must stay below half the ~745-nat underflow cliff
_BLOCK_RANGE_NATS = 300.0


def log1mexp(x):
    """log(1 - exp(x)) for x <= 0, elementwise, stable at both ends."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        small = x < -np.log(2.0)
        out = np.where(small, np.log1p(-np.exp(np.where(small, x, -1.0))),
                       np.log(-np.expm1(np.where(small, -1.0, x))))
    return out if out.ndim else float(out)


def log_sub(a: float, b: float) -> float:
    """log(exp(a) - exp(b)) for a >= b."""
    if b == NEG_INF:
        return a
    if b >= a:
        return NEG_INF
    return a + float(log1mexp(b - a))


def log_sum(log_values) -> float:
    """log(sum(exp(values))) with max extraction; deterministic order."""
    lv = np.asarray(log_values, dtype=float)
    if lv.size == 0:
        return NEG_INF
    m = np.max(lv)
    if m == NEG_INF:
        return NEG_INF
    return float(m + np.log(np.sum(np.exp(lv - m))))


def log_tail_from_mass(log_mass: np.ndarray, log_overflow: float = NEG_INF) -> np.ndarray:
    """Exceedance log-probabilities of a lattice: entry k is log P{X > point_k}.

    ``log_overflow`` is mass beyond the last point and seeds the accumulation.
    """
    lm = np.asarray(log_mass, dtype=float)
    if lm.size == 0:
        return lm.copy()
    rev = np.empty(lm.size + 1)
    rev[0] = log_overflow
    rev[1:] = lm[::-1]
    acc = np.logaddexp.accumulate(rev)
    return acc[:-1][::-1].copy()


def _max_block_range(lv: np.ndarray, block: int) -> float:
    """Largest (max - min) of finite entries within any length-``block`` chunk."""
    n = lv.size
    nb = -(-n // block)
    padded = np.full(nb * block, NEG_INF)
    padded[:n] = lv
    rows = padded.reshape(nb, block)
    hi = np.max(rows, axis=1)
    lo = np.min(np.where(np.isfinite(rows), rows, np.inf), axis=1)
    ranges = hi - lo
    ranges[~np.isfinite(ranges)] = 0.0  # all-empty blocks
    return float(np.max(ranges)) if ranges.size else 0.0


def _choose_block(la: np.ndarray, lb: np.ndarray, block: int) -> int:
    """Largest block size keeping every block's log-range under the budget.

    Convolving two blocks can stack their ranges, so the budget stays well
    clear of the ~745-nat double-precision underflow cliff.
    """
    b = block
    while b > 1:
        if max(_max_block_range(la, b), _max_block_range(lb, b)) <= _BLOCK_RANGE_NATS:
            return b
        b //= 2
    return b  # block 1 scales every product exactly; only adversarial inputs land here


def _block_stats(lv: np.ndarray, block: int):
    """Split into blocks; return per-block maxima and scaled linear blocks."""
    n = lv.size
    nb = -(-n // block)
    padded = np.full(nb * block, NEG_INF)
    padded[:n] = lv
    blocks = padded.reshape(nb, block)
    maxes = np.max(blocks, axis=1)
    lin = np.zeros_like(blocks)
    finite = maxes > NEG_INF
    lin[finite] = np.exp(blocks[finite] - maxes[finite, None])
    return maxes, lin


def log_convolve(la: np.ndarray, lb: np.ndarray, block: int = 8192) -> np.ndarray:
    """Exact convolution of two log-mass arrays; returns log masses, len a+b-1.

    Direct summation per block pair keeps every term at full relative
    precision regardless of the dynamic range of the inputs.  The block size
    shrinks automatically when the log-mass is steep enough that a single
    block could span the underflow range of double precision.
    """
    la = np.asarray(la, dtype=float)
    lb = np.asarray(lb, dtype=float)
    na, nb_len = la.size, lb.size
    if na == 0 or nb_len == 0:
        return np.empty(0)
    out_len = na + nb_len - 1
    block = _choose_block(la, lb, block)
    ma, ua = _block_stats(la, block)
    mb, ub = _block_stats(lb, block)
    nba, nbb = ma.size, mb.size
    nblocks_out = nba + nbb
    acc = np.zeros((nblocks_out, block))
    scale = np.full(nblocks_out, NEG_INF)
    for i in range(nba):
        if ma[i] == NEG_INF:
            continue
        for j in range(nbb):
            if mb[j] == NEG_INF:
                continue
            m = ma[i] + mb[j]
            d = i + j
            if m - scale[d] < _UNDERFLOW_LOG and m - scale[d + 1] < _UNDERFLOW_LOG:
                continue
            c = np.convolve(ua[i], ub[j])
            for blk, seg in ((d, c[:block]), (d + 1, c[block:])):
                if seg.size == 0 or not seg.any():
                    continue  # a massless segment must not raise the scale
                if m > scale[blk]:
                    if scale[blk] > NEG_INF:
                        acc[blk] *= np.exp(scale[blk] - m)
                    scale[blk] = m
                    acc[blk, : seg.size] += seg
                else:
                    f = np.exp(m - scale[blk])
                    if f > 0.0:
                        acc[blk, : seg.size] += f * seg
    flat = acc.reshape(-1)
    out = np.full(nblocks_out * block, NEG_INF)
    pos = flat > 0.0
    out[pos] = np.log(flat[pos]) + np.repeat(scale, block)[pos]
    return out[:out_len]
