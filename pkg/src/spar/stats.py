"""Binomial probabilities and central intervals."""

from __future__ import annotations

import numpy as np
from scipy.special import bdtr


def binomial_cdf(k, n, p):
    """``P(N <= k)`` for ``N ~ Binomial(n, p)`` via the regularised
    incomplete beta function."""
    k = np.asarray(k)
    n = np.asarray(n)
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("p must lie in [0, 1]")
    if np.any(n < 0):
        raise ValueError("n must be nonnegative")
    k_f = np.floor(k).astype(float)
    out = np.where(k_f < 0, 0.0, np.where(k_f >= n, 1.0, bdtr(np.clip(k_f, 0, None), n, p)))
    return out[()] if out.ndim == 0 else out


def _ppf(q, n, p):
    # smallest k with P(N <= k) >= q, by bisection over [0, n]
    n = np.asarray(n, dtype=np.int64)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n, p, q = np.broadcast_arrays(n, p, q)
    lo = np.full(n.shape, -1, dtype=np.int64)  # cdf(lo) < q, with cdf(-1) = 0
    hi = n.copy()  # cdf(hi) >= q
    while True:
        active = hi - lo > 1
        if not np.any(active):
            break
        mid = (lo + hi) // 2
        ok = binomial_cdf(mid, n, p) >= q
        hi = np.where(active & ok, mid, hi)
        lo = np.where(active & ~ok, mid, lo)
    return hi


def binomial_ci(n, p, level: float = 0.95):
    """Central ``level`` interval ``(k_lo, k_hi)`` of ``Binomial(n, p)``.

    ``level = 0`` collapses to the median.
    """
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    tail = (1.0 - level) / 2.0
    lo = _ppf(tail, n, p)
    hi = _ppf(1.0 - tail, n, p)
    if np.ndim(lo) == 0:
        return int(lo), int(hi)
    return lo, hi
