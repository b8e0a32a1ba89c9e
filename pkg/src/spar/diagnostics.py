"""Model checks: angular cell counts, Voronoi tables, angular-bin QQ data,
marginal tail curves, threshold stability and block bootstrap intervals.

Everything returns plain arrays or data frames for external plotting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import pandas as pd

from .geometry import PolarSample, SphereGrid, to_polar
from .nnet import MlpArchitecture, TrainConfig
from .radial import DEFAULT_HIDDEN, exceedance_set, fit_gp, fit_threshold, gp_quantile_excess
from .stats import binomial_cdf, binomial_ci

log = logging.getLogger(__name__)

__all__ = [
    "binomial_cdf",
    "binomial_ci",
    "cell_counts",
    "voronoi_assign",
    "CellTable",
    "observed_vs_expected",
    "downsample",
    "qq_bins",
    "marginal_tail_curves",
    "threshold_stability",
    "block_bootstrap",
    "bootstrap_ci",
    "bootstrap_curves",
]

DEFAULT_THETA_MAX = np.radians(15.0)
DEFAULT_MIN_COUNT = 200
DEFAULT_STRIDE = 24
DEFAULT_ZETA_GRID = np.round(0.0125 * np.arange(1, 21), 6)
DEFAULT_Q_LEVEL = 1e-6
DEFAULT_N_BOOT = 200
DEFAULT_BLOCK_LEN = 96
SUMMARY_PROBS = (0.025, 0.25, 0.5, 0.75, 0.975)

_CHUNK = 4_000_000  # dot-product elements per block


def _directions(grid) -> np.ndarray:
    return grid.directions if isinstance(grid, SphereGrid) else np.atleast_2d(np.asarray(grid, dtype=float))


def _row_blocks(n_rows: int, n_cols: int):
    step = max(1, _CHUNK // max(n_cols, 1))
    for s in range(0, n_rows, step):
        yield slice(s, min(s + step, n_rows))


def cell_counts(angles, grid, theta_max: float = DEFAULT_THETA_MAX) -> np.ndarray:
    """Number of angles within ``theta_max`` radians of each grid direction.

    Caps around neighbouring directions overlap, so counts need not sum to n.
    """
    if theta_max <= 0:
        raise ValueError("theta_max must be positive")
    A = np.atleast_2d(np.asarray(angles, dtype=float))
    D = _directions(grid)
    cos_t = np.cos(theta_max)
    counts = np.zeros(len(D), dtype=np.int64)
    for sl in _row_blocks(len(A), len(D)):
        counts += np.count_nonzero(A[sl] @ D.T > cos_t, axis=0)
    return counts


def voronoi_assign(angles, grid) -> np.ndarray:
    """Index of the nearest grid direction for every angle (lowest index on ties)."""
    A = np.atleast_2d(np.asarray(angles, dtype=float))
    D = _directions(grid)
    if len(D) == 0:
        raise ValueError("empty grid")
    out = np.empty(len(A), dtype=np.int64)
    for sl in _row_blocks(len(A), len(D)):
        out[sl] = np.argmax(A[sl] @ D.T, axis=1)
    return out


@dataclass
class CellTable:
    """Observed vs expected Voronoi cell counts."""

    cell: np.ndarray
    observed: np.ndarray
    prob: np.ndarray
    expected: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    n: int
    level: float

    @property
    def inside(self) -> np.ndarray:
        return (self.observed >= self.ci_lower) & (self.observed <= self.ci_upper)

    def coverage(self) -> float:
        return float(np.mean(self.inside)) if len(self.cell) else float("nan")

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "cell": self.cell,
                "observed": self.observed,
                "probability": self.prob,
                "expected": self.expected,
                "ci_lower": self.ci_lower,
                "ci_upper": self.ci_upper,
                "inside": self.inside,
            }
        )


def observed_vs_expected(obs_angles, sim_angles, grid, level: float = 0.95) -> CellTable:
    """Compare observed Voronoi counts with a simulated reference.

    Cell probabilities are the simulated fractions; the expected count and
    its central binomial interval use the observed sample size. Cells that
    are empty in both samples are dropped.
    """
    D = _directions(grid)
    k = len(D)
    obs = np.bincount(voronoi_assign(obs_angles, D), minlength=k)
    sim = np.bincount(voronoi_assign(sim_angles, D), minlength=k)
    n = int(obs.sum())
    prob = sim / sim.sum()
    keep = np.flatnonzero((obs > 0) | (prob > 0))
    lo, hi = binomial_ci(n, prob[keep], level)
    return CellTable(
        keep,
        obs[keep],
        prob[keep],
        n * prob[keep],
        np.atleast_1d(lo),
        np.atleast_1d(hi),
        n,
        level,
    )


def downsample(n: int, stride: int = DEFAULT_STRIDE) -> np.ndarray:
    """Every ``stride``-th index starting from the first (0-based)."""
    if stride < 1:
        raise ValueError("stride must be at least 1")
    return np.arange(0, n, stride)


def _as_polar(x) -> PolarSample:
    return x if isinstance(x, PolarSample) else to_polar(x)


def qq_bins(
    obs,
    sim,
    grid,
    theta_max: float = DEFAULT_THETA_MAX,
    min_count: int = DEFAULT_MIN_COUNT,
    zeta: float = 0.1,
):
    """Angular-bin QQ data for threshold exceedances.

    For every grid direction whose cap holds at least ``min_count``
    observations, the bin threshold is the empirical ``1 - zeta`` quantile of
    the simulated radii in the cap. Sorted observed exceedances are paired
    with simulated exceedance quantiles at plotting positions ``j/(k+1)``.

    Returns ``(points, aggregate)``: a long table with columns ``cell``,
    ``level``, ``observed``, ``simulated``, and the bin-mean curve at the
    common levels ``j/(K+1)`` where ``K`` is the smallest per-bin exceedance
    count.
    """
    if min_count < 1:
        raise ValueError("min_count must be at least 1")
    po, ps = _as_polar(obs), _as_polar(sim)
    D = _directions(grid)
    cos_t = np.cos(theta_max)
    rows = []
    per_bin = []
    for j, u in enumerate(D):
        in_obs = po.angles @ u > cos_t
        if in_obs.sum() < min_count:
            continue
        r_sim = ps.radii[ps.angles @ u > cos_t]
        if r_sim.size == 0:
            continue
        thr = np.quantile(r_sim, 1.0 - zeta)
        e_obs = np.sort(po.radii[in_obs][po.radii[in_obs] > thr] - thr)
        e_sim = r_sim[r_sim > thr] - thr
        if e_obs.size == 0 or e_sim.size == 0:
            continue
        levels = np.arange(1, e_obs.size + 1) / (e_obs.size + 1)
        q_sim = np.quantile(e_sim, levels, method="weibull")
        rows.append(pd.DataFrame({"cell": j, "level": levels, "observed": e_obs, "simulated": q_sim}))
        per_bin.append((e_obs, e_sim))
    cols = ["cell", "level", "observed", "simulated"]
    if not rows:
        return pd.DataFrame(columns=cols), pd.DataFrame(columns=["level", "observed", "simulated"])
    points = pd.concat(rows, ignore_index=True)
    K = min(e.size for e, _ in per_bin)
    common = np.arange(1, K + 1) / (K + 1)
    qo = np.mean([np.quantile(e, common, method="weibull") for e, _ in per_bin], axis=0)
    qs = np.mean([np.quantile(s, common, method="weibull") for _, s in per_bin], axis=0)
    return points, pd.DataFrame({"level": common, "observed": qo, "simulated": qs})


def _exceedance(sorted_vals: np.ndarray, x: np.ndarray) -> np.ndarray:
    return 1.0 - np.searchsorted(sorted_vals, x, side="right") / sorted_vals.size


def marginal_tail_curves(obs, sim, names=None, n_grid: int = 500) -> pd.DataFrame:
    """Empirical exceedance and non-exceedance probabilities of each column.

    Both samples are evaluated on a shared per-variable grid spanning their
    joint range. Long format with columns ``variable``, ``sample``
    (``observed``/``simulated``), ``kind`` (``exceedance``/``non_exceedance``),
    ``x``, ``probability``, ``log10_probability``; zero-probability rows are
    omitted.
    """
    obs = np.asarray(obs, dtype=float)
    sim = np.asarray(sim, dtype=float)
    if obs.ndim == 1:
        obs, sim = obs[:, None], sim[:, None] if sim.ndim == 1 else sim
    if obs.shape[1] != sim.shape[1]:
        raise ValueError("observed and simulated samples have different variables")
    names = list(names) if names is not None else [f"x{i}" for i in range(obs.shape[1])]
    frames = []
    for i, name in enumerate(names):
        a, b = np.sort(obs[:, i]), np.sort(sim[:, i])
        grid = np.linspace(min(a[0], b[0]), max(a[-1], b[-1]), n_grid)
        for label, vals in (("observed", a), ("simulated", b)):
            pe = _exceedance(vals, grid)
            pn = np.searchsorted(vals, grid, side="right") / vals.size
            for kind, p in (("exceedance", pe), ("non_exceedance", pn)):
                keep = p > 0
                frames.append(
                    pd.DataFrame(
                        {
                            "variable": name,
                            "sample": label,
                            "kind": kind,
                            "x": grid[keep],
                            "probability": p[keep],
                            "log10_probability": np.log10(p[keep]),
                        }
                    )
                )
    return pd.concat(frames, ignore_index=True)


def threshold_stability(
    data,
    zeta_grid=DEFAULT_ZETA_GRID,
    hidden=DEFAULT_HIDDEN,
    config: TrainConfig = TrainConfig(),
    q_level: float = DEFAULT_Q_LEVEL,
) -> pd.DataFrame:
    """Refit the radial model over a grid of ``zeta`` values.

    For each ``zeta`` the shape ``xi`` and the radius with total exceedance
    probability ``q_level`` are evaluated at every observed angle and
    summarised by the 2.5, 25, 50, 75 and 97.5 percent quantiles. A fit that
    raises is kept as a row of NaNs with its error message.
    """
    p = _as_polar(data)
    zeta_grid = np.asarray(zeta_grid, dtype=float)
    if np.any((zeta_grid <= 0) | (zeta_grid >= 1)):
        raise ValueError("zeta values must lie in (0, 1)")
    if np.any(np.diff(zeta_grid) <= 0):
        raise ValueError("zeta grid must be ascending")
    cols = [f"{v}_q{100 * q:g}" for v in ("xi", "radius") for q in SUMMARY_PROBS]
    rows = []
    for k, zeta in enumerate(zeta_grid):
        row = {"zeta": zeta, "q_level": q_level, "n_exceed": 0, "status": "ok"}
        row.update(dict.fromkeys(cols, np.nan))
        try:
            if q_level > zeta:
                raise ValueError("q_level exceeds zeta")
            cfg = replace(config, seed=config.seed + k)
            th = fit_threshold(p.angles, p.radii, zeta, MlpArchitecture(p.d, hidden, 1), cfg)
            idx, z = exceedance_set(p.angles, p.radii, th)
            gp = fit_gp(p.angles[idx], z, MlpArchitecture(p.d, hidden, 2), cfg)
            _, xi, sigma = gp.predict(p.angles)
            radius = th(p.angles) + gp_quantile_excess(sigma, xi, q_level / zeta)
            row["n_exceed"] = int(idx.size)
            for name, vals in (("xi", xi), ("radius", radius)):
                qs = np.quantile(vals, SUMMARY_PROBS)
                row.update({f"{name}_q{100 * q:g}": v for q, v in zip(SUMMARY_PROBS, qs)})
            if th.degraded or gp.degraded:
                row["status"] = "degraded"
        except Exception as exc:  # recorded, sweep continues
            log.warning("stability fit failed at zeta=%g: %s", zeta, exc)
            row["status"] = f"failed: {exc}"
        rows.append(row)
    return pd.DataFrame(rows, columns=["zeta", "q_level", "n_exceed", "status", *cols])


def block_bootstrap(n: int, block_len: int = DEFAULT_BLOCK_LEN, n_boot: int = DEFAULT_N_BOOT, seed=None) -> np.ndarray:
    """Moving-block bootstrap index replicates, shape ``(n_boot, n)``.

    Each replicate joins ``ceil(n / block_len)`` runs of consecutive
    indices with uniform non-wrapping start points, cut to length ``n``.
    """
    if not 1 <= block_len <= n:
        raise ValueError("block_len must lie in [1, n]")
    rng = np.random.default_rng(seed)
    n_blocks = -(-n // block_len)
    starts = rng.integers(0, n - block_len + 1, size=(n_boot, n_blocks))
    idx = starts[:, :, None] + np.arange(block_len)
    return idx.reshape(n_boot, -1)[:, :n]


def bootstrap_ci(replicates, level: float = 0.95):
    """Pointwise ``(lower, upper)`` empirical quantile envelopes over the
    first axis of ``replicates``; NaN entries are ignored."""
    R = np.asarray(replicates, dtype=float)
    if R.shape[0] < 2:
        raise ValueError("need at least two replicates")
    if not 0.0 <= level < 1.0:
        raise ValueError("level must lie in [0, 1)")
    lo, hi = np.nanquantile(R, [(1.0 - level) / 2.0, (1.0 + level) / 2.0], axis=0)
    return lo, hi


def bootstrap_curves(
    data,
    statistic: Callable[[np.ndarray], np.ndarray],
    block_len: int = DEFAULT_BLOCK_LEN,
    n_boot: int = DEFAULT_N_BOOT,
    level: float = 0.95,
    seed=None,
):
    """Block-bootstrap envelope of ``statistic`` applied to resampled rows.

    Returns ``(lower, upper, replicates)``.
    """
    data = np.asarray(data)
    idx = block_bootstrap(len(data), block_len, n_boot, seed)
    reps = np.stack([np.asarray(statistic(data[i]), dtype=float) for i in idx])
    lo, hi = bootstrap_ci(reps, level)
    return lo, hi, reps


def exceedance_on_grid(values, grid) -> np.ndarray:
    """Empirical ``P(X > x)`` at each ``x`` in ``grid``."""
    return _exceedance(np.sort(np.asarray(values, dtype=float)), np.asarray(grid, dtype=float))
