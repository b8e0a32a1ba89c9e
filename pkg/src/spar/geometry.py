"""Angular-radial coordinates, pseudo-regular sphere grids and rotations."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product
from math import comb

import numpy as np

_UNIT_TOL = 1e-8


@dataclass(frozen=True)
class PolarSample:
    """Radii and unit-row angles of a point cloud.

    ``source_index[i]`` is the row of the original matrix that produced
    ``radii[i]`` and ``angles[i]``.
    """

    radii: np.ndarray
    angles: np.ndarray
    source_index: np.ndarray

    def __len__(self) -> int:
        return len(self.radii)

    @property
    def d(self) -> int:
        return self.angles.shape[1]

    def subset(self, idx) -> "PolarSample":
        return PolarSample(self.radii[idx], self.angles[idx], self.source_index[idx])


@dataclass(frozen=True)
class SphereGrid:
    """Unit directions obtained by projecting the L1-sphere lattice of
    resolution ``m`` onto the L2 sphere in ``d`` dimensions."""

    directions: np.ndarray
    m: int
    d: int

    def __len__(self) -> int:
        return len(self.directions)


def to_polar(X) -> PolarSample:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    radii = np.linalg.norm(X, axis=1)
    zero = np.flatnonzero(radii == 0.0)
    if zero.size:
        raise ValueError(f"row {int(zero[0])} is the origin; its angle is undefined")
    angles = X / radii[:, None]
    return PolarSample(radii, angles, np.arange(len(X)))


def from_polar(p: PolarSample) -> np.ndarray:
    return p.radii[:, None] * p.angles


def grid_size(d: int, m: int) -> int:
    """Number of integer points with L1 norm ``m`` in ``d`` dimensions."""
    return sum(2**k * comb(d, k) * comb(m - 1, k - 1) for k in range(1, min(d, m) + 1))


def _compositions(m: int, k: int):
    # strictly positive k-part compositions of m, via stars and bars
    for cuts in combinations(range(1, m), k - 1):
        bounds = (0,) + cuts + (m,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(k))


def _l1_lattice(d: int, m: int) -> np.ndarray:
    rows = []
    for k in range(1, min(d, m) + 1):
        parts = np.array(list(_compositions(m, k)), dtype=np.int64)
        signs = np.array(list(product((1, -1), repeat=k)), dtype=np.int64)
        signed = (parts[:, None, :] * signs[None, :, :]).reshape(-1, k)
        for support in combinations(range(d), k):
            block = np.zeros((len(signed), d), dtype=np.int64)
            block[:, support] = signed
            rows.append(block)
    return np.concatenate(rows, axis=0)


def sphere_grid(d: int, m: int) -> SphereGrid:
    """Pseudo-regular directions on the unit sphere in ``d`` dimensions.

    Lattice points ``(i_1, ..., i_d)/m`` with ``sum |i_j| = m`` lie on the L1
    unit sphere; each is rescaled to unit Euclidean length.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    if m < 1:
        raise ValueError("m must be at least 1")
    lattice = _l1_lattice(d, m).astype(float) / m
    dirs = lattice / np.linalg.norm(lattice, axis=1, keepdims=True)
    # exact bitwise dedup, keeping first occurrence order
    _, first = np.unique(dirs.view(np.dtype((np.void, dirs.dtype.itemsize * d))), return_index=True)
    dirs = dirs[np.sort(first)]
    return SphereGrid(np.ascontiguousarray(dirs), m, d)


def householder_to(mu) -> np.ndarray:
    """Symmetric orthogonal reflection ``P`` with ``P @ e1 == mu``."""
    mu = np.asarray(mu, dtype=float)
    if abs(np.linalg.norm(mu) - 1.0) > _UNIT_TOL:
        raise ValueError("mu must be a unit vector")
    d = mu.size
    diff = -mu.copy()
    diff[0] += 1.0
    nrm = np.linalg.norm(diff)
    if nrm < 1e-12:
        return np.eye(d)
    u = diff / nrm
    return np.eye(d) - 2.0 * np.outer(u, u)


def reflect_from_e1(Y: np.ndarray, mus: np.ndarray) -> np.ndarray:
    """Apply the row-wise Householder reflection taking e1 to ``mus[i]`` to
    ``Y[i]`` without forming the matrices."""
    diff = -mus.copy()
    diff[:, 0] += 1.0
    nrm = np.linalg.norm(diff, axis=1)
    keep = nrm < 1e-12
    nrm[keep] = 1.0
    u = diff / nrm[:, None]
    u[keep] = 0.0
    return Y - 2.0 * u * np.einsum("ij,ij->i", u, Y)[:, None]


def tangent_normal_compose(t: float, v, mu) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if abs(t) > 1.0:
        raise ValueError("t must lie in [-1, 1]")
    if abs(float(v @ mu)) >= 1e-10:
        raise ValueError("v must be orthogonal to mu")
    return t * mu + np.sqrt(1.0 - t * t) * v


def angular_distance(w, u):
    """Great-circle distance in radians; broadcasts over leading axes."""
    dot = np.sum(np.asarray(w, dtype=float) * np.asarray(u, dtype=float), axis=-1)
    return np.arccos(np.clip(dot, -1.0, 1.0))
