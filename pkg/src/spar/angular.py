"""Power-spherical kernel density estimation on the unit hypersphere.

The kernel with mean direction ``mu`` and concentration ``kappa`` on the
sphere in ``d`` dimensions has log-density

    -eta*log(4*pi) + kappa*log((1 + w.mu)/2) + lgamma(2*eta + kappa) - lgamma(eta + kappa)

with ``eta = (d - 1)/2``. Everything is evaluated in log space so large
bandwidths never overflow.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .geometry import reflect_from_e1

log = logging.getLogger(__name__)

DEFAULT_KAPPA_GRID = np.logspace(1.0, 4.0, 50)
DEFAULT_M_PRED = 1000
DEFAULT_K_EXCLUDE = 48

# element budget for (queries x centers) work blocks
_BLOCK_ELEMS = 2_000_000


@dataclass(frozen=True)
class KdeModel:
    angles: np.ndarray
    kappa: float

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.angles, dtype=float))
        if len(a) < 1:
            raise ValueError("KdeModel needs at least one center")
        if self.kappa < 0:
            raise ValueError("kappa must be nonnegative")
        if np.max(np.abs(np.linalg.norm(a, axis=1) - 1.0)) > 1e-8:
            raise ValueError("kernel centers must be unit vectors")
        object.__setattr__(self, "angles", a)
        object.__setattr__(self, "kappa", float(self.kappa))

    @property
    def d(self) -> int:
        return self.angles.shape[1]

    @property
    def eta(self) -> float:
        return (self.d - 1) / 2.0

    @property
    def n(self) -> int:
        return len(self.angles)


def ps_log_normalizer(kappa: float, d: int) -> float:
    eta = (d - 1) / 2.0
    return -eta * np.log(4.0 * np.pi) + gammaln(2.0 * eta + kappa) - gammaln(eta + kappa)


def _kappa_log_z(dots, kappa: float):
    z = 0.5 * (1.0 + np.clip(dots, -1.0, 1.0))
    if kappa == 0.0:
        return np.zeros_like(z)
    with np.errstate(divide="ignore"):
        return kappa * np.log(z)


def ps_log_density(w, mu, kappa: float, d: int | None = None):
    """Log-density of the power-spherical kernel; ``w`` may hold many rows."""
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    w = np.asarray(w, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if d is None:
        d = mu.shape[-1]
    dots = np.sum(w * mu, axis=-1)
    return ps_log_normalizer(kappa, d) + _kappa_log_z(dots, kappa)


def _log_mean_exp(terms: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Row-wise log(sum(exp(terms))/count), terms may contain -inf."""
    top = np.max(terms, axis=1)
    safe = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        s = np.log(np.sum(np.exp(terms - safe[:, None]), axis=1))
    return s + safe - np.log(counts)


def kde_log_density(w, model: KdeModel, exclude=None):
    """Log of the KDE at ``w`` (one vector or rows).

    ``exclude`` removes kernel centers from the mixture: an index collection
    applied to every query, or for row queries a boolean mask of shape
    ``(n_queries, n_centers)``.
    """
    w = np.asarray(w, dtype=float)
    single = w.ndim == 1
    W = np.atleast_2d(w)
    n = model.n
    mask = None
    if exclude is not None:
        ex = np.asarray(exclude)
        if ex.dtype == bool and ex.ndim == 2:
            mask = ex
        else:
            m1 = np.zeros(n, dtype=bool)
            m1[np.asarray(list(exclude), dtype=int)] = True
            mask = np.broadcast_to(m1, (len(W), n))
        if np.any(mask.sum(axis=1) >= n):
            raise ValueError("every kernel center is excluded")
    lognorm = ps_log_normalizer(model.kappa, model.d)
    out = np.empty(len(W))
    step = max(1, _BLOCK_ELEMS // n)
    for s in range(0, len(W), step):
        blk = slice(s, s + step)
        terms = _kappa_log_z(W[blk] @ model.angles.T, model.kappa)
        if mask is None:
            counts = np.full(terms.shape[0], float(n))
        else:
            mb = mask[blk]
            terms = np.where(mb, -np.inf, terms)
            counts = (n - mb.sum(axis=1)).astype(float)
        out[blk] = _log_mean_exp(terms, counts)
    out += lognorm
    return out[0] if single else out


def kde_density(w, model: KdeModel):
    return np.exp(kde_log_density(w, model))


def optimize_bandwidth(
    angles,
    kappa_grid=DEFAULT_KAPPA_GRID,
    m_pred: int = DEFAULT_M_PRED,
    k_exclude: int = DEFAULT_K_EXCLUDE,
    seed=None,
):
    """Choose the kernel bandwidth by stochastic leave-window-out likelihood.

    ``m_pred`` evaluation points are drawn once and reused for every
    bandwidth. At evaluation point ``i`` the centers ``i-k .. i+k`` (clipped
    to the sample) are left out to suppress serial correlation.

    Returns
    -------
    kappa_star : float
        Grid value with the smallest negative log-likelihood (the smaller
        value on ties).
    nll : ndarray
        Negative log-likelihood at each grid value.
    """
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    kappa_grid = np.asarray(kappa_grid, dtype=float)
    n, d = angles.shape
    if kappa_grid.size == 0:
        raise ValueError("kappa_grid is empty")
    if m_pred < 1:
        raise ValueError("m_pred must be positive")
    if n <= 2 * k_exclude + 1:
        raise ValueError("sample too short for the exclusion window")
    m_pred = min(int(m_pred), n)
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=m_pred, replace=False))

    lognorms = np.array([ps_log_normalizer(k, d) for k in kappa_grid])
    nll = np.zeros(kappa_grid.size)
    cols = np.arange(n)
    step = max(1, _BLOCK_ELEMS // n)
    for s in range(0, m_pred, step):
        rows = idx[s : s + step]
        excl = np.abs(cols[None, :] - rows[:, None]) <= k_exclude
        counts = (n - excl.sum(axis=1)).astype(float)
        z = 0.5 * (1.0 + np.clip(angles[rows] @ angles.T, -1.0, 1.0))
        with np.errstate(divide="ignore"):
            logz = np.where(excl, -np.inf, np.log(z))
        top = np.max(logz, axis=1, keepdims=True)
        rel = logz - top
        for j, kappa in enumerate(kappa_grid):
            if kappa == 0.0:
                lse = np.log(counts)
            else:
                lse = kappa * top[:, 0] + np.log(np.sum(np.exp(kappa * rel), axis=1))
            nll[j] -= np.sum(lse - np.log(counts) + lognorms[j])
    best = int(np.argmin(nll))  # first minimum, i.e. smaller kappa on ties
    log.info("bandwidth search: kappa*=%g nll=%g", kappa_grid[best], nll[best])
    return float(kappa_grid[best]), nll


def _beta_via_gamma(a: float, b: float, size: int, rng):
    x = rng.standard_gamma(a, size)
    y = rng.standard_gamma(b, size)
    return x, y


def _sample_ps_rows(mus: np.ndarray, kappa: float, rng) -> np.ndarray:
    """One power-spherical draw per row of ``mus``."""
    count, d = mus.shape
    eta = (d - 1) / 2.0
    # Z ~ Beta(kappa + eta, eta) as X/(X+Y); T = 2Z - 1 = (X-Y)/(X+Y)
    x, y = _beta_via_gamma(kappa + eta, eta, count, rng)
    tot = x + y
    t = (x - y) / tot
    sin_part = 2.0 * np.sqrt(x * y) / tot
    v = rng.standard_normal((count, d - 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    Y = np.empty((count, d))
    Y[:, 0] = t
    Y[:, 1:] = sin_part[:, None] * v
    return reflect_from_e1(Y, mus)


def sample_ps(mu, kappa: float, count: int, seed=None) -> np.ndarray:
    """Draw ``count`` unit vectors from the power-spherical law around ``mu``."""
    mu = np.asarray(mu, dtype=float)
    if kappa < 0:
        raise ValueError("kappa must be nonnegative")
    if abs(np.linalg.norm(mu) - 1.0) > 1e-8:
        raise ValueError("mu must be a unit vector")
    rng = np.random.default_rng(seed)
    return _sample_ps_rows(np.broadcast_to(mu, (count, mu.size)).copy(), kappa, rng)


def sample_kde(model: KdeModel, count: int, seed=None) -> np.ndarray:
    """Pick kernel centers uniformly, then draw from each picked kernel."""
    if count < 1:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(seed)
    which = rng.integers(model.n, size=count)
    return _sample_ps_rows(model.angles[which], model.kappa, rng)
