"""Synthetic corpora with known angular-radial structure.

Used by the test suite and the CLI smoke runs in place of real hindcast
data.
"""

from __future__ import annotations

import numpy as np
import pandas as pd


def uniform_sphere(n: int, d: int, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def gp_excess(sigma, xi, size, rng):
    u = 1.0 - rng.random(size)
    sigma = np.asarray(sigma, dtype=float)
    xi = np.asarray(xi, dtype=float)
    small = np.abs(xi) < 1e-12
    safe = np.where(small, 1.0, xi)
    return np.where(small, -sigma * np.log(u), sigma * np.expm1(-safe * np.log(u)) / safe)


def stationary_tail_sample(n, d, u=2.3, sigma=2.0, xi=-0.1, zeta=0.1, seed=None, angles=None):
    """Points whose radius has ``P(R > u) = zeta`` exactly and GP excesses.

    Below the threshold ``R = u * sqrt(V)`` with ``V`` uniform. Returns the
    ``(n, d)`` Cartesian sample.
    """
    rng = np.random.default_rng(seed)
    W = uniform_sphere(n, d, rng) if angles is None else np.asarray(angles, dtype=float)
    tail = rng.random(n) < zeta
    r = u * np.sqrt(1.0 - rng.random(n))
    r[tail] = u + gp_excess(sigma, xi, int(tail.sum()), rng)
    return r[:, None] * W


def modulated_tail_sample(n, sigma_fn, xi=-0.1, u_fn=None, zeta=0.1, d=2, seed=None):
    """Like :func:`stationary_tail_sample` but with direction-dependent
    threshold and scale; ``sigma_fn`` and ``u_fn`` map unit rows to arrays."""
    rng = np.random.default_rng(seed)
    W = uniform_sphere(n, d, rng)
    u = np.full(n, 2.3) if u_fn is None else np.asarray(u_fn(W), dtype=float)
    tail = rng.random(n) < zeta
    r = u * np.sqrt(1.0 - rng.random(n))
    r[tail] = u[tail] + gp_excess(sigma_fn(W[tail]), xi, int(tail.sum()), rng)
    return r[:, None] * W


def metocean_frame(n: int, seed=None) -> pd.DataFrame:
    """Hourly-like wind and wave records with realistic ranges.

    Columns ``hs`` (m), ``tm`` (s), ``wave_dir`` and ``wind_dir`` (degrees
    clockwise from North, direction going to) and ``u10`` (m/s). Series are
    AR(1) smoothed so neighbouring rows are correlated.
    """
    rng = np.random.default_rng(seed)

    def ar1(phi, size):
        e = rng.standard_normal(size)
        x = np.empty(size)
        x[0] = e[0]
        for i in range(1, size):
            x[i] = phi * x[i - 1] + np.sqrt(1 - phi * phi) * e[i]
        return x

    base = ar1(0.97, n)
    wind_dir = np.degrees(0.6 + 0.8 * ar1(0.99, n)) % 360.0
    wave_dir = (wind_dir + 20.0 * rng.standard_normal(n)) % 360.0
    u10 = np.exp(1.9 + 0.45 * base + 0.1 * rng.standard_normal(n))
    hs = 0.02 * u10**1.6 * np.exp(0.15 * rng.standard_normal(n)) + 0.3
    steep = 0.02 + 0.015 * rng.random(n)
    tm = np.sqrt(2 * np.pi * hs / (9.81 * steep))
    return pd.DataFrame({"hs": hs, "tm": tm, "wave_dir": wave_dir, "u10": u10, "wind_dir": wind_dir})
