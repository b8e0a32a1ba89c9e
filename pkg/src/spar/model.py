"""The fitted angular-radial model: density, contours, simulation, storage."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .angular import DEFAULT_K_EXCLUDE, DEFAULT_KAPPA_GRID, DEFAULT_M_PRED, KdeModel, kde_log_density, optimize_bandwidth, sample_kde
from .geometry import SphereGrid, to_polar
from .nnet import MlpArchitecture, MlpParams, TrainConfig
from .radial import (
    DEFAULT_HIDDEN,
    DEFAULT_ZETA,
    GpModel,
    ThresholdModel,
    exceedance_set,
    fit_gp,
    fit_threshold,
    gp_nll,
    gp_quantile_excess,
    predict_radial,
)

log = logging.getLogger(__name__)

FORMAT_MAGIC = b"SPARMODEL"
FORMAT_VERSION = 1


class BelowThresholdError(ValueError):
    """The joint density is only modelled above the threshold surface."""


class ModelFormatError(ValueError):
    pass


@dataclass
class SparModel:
    zeta: float
    kde: KdeModel
    threshold: ThresholdModel
    gp: GpModel
    body_pool: np.ndarray
    preprocess: dict | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError("zeta must lie in (0, 1]")
        dims = {self.kde.d, self.threshold.arch.input_dim, self.gp.arch.input_dim}
        if self.body_pool.size:
            dims.add(self.body_pool.shape[1])
        if len(dims) != 1:
            raise ValueError("sub-models disagree on the dimension")
        if self.zeta < 1.0 and len(self.body_pool) == 0:
            raise ValueError("body_pool is empty")

    @property
    def d(self) -> int:
        return self.kde.d

    def radial(self, w):
        """``(u, sigma, xi)`` at direction(s) ``w``."""
        return predict_radial(self.threshold, self.gp, w)


def log_joint_density(model: SparModel, x):
    """Log-density of the model at point(s) ``x`` above the threshold.

    Raises :class:`BelowThresholdError` if any point has ``r <= u(w)``;
    points past a finite upper endpoint get ``-inf``.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    p = to_polar(np.atleast_2d(x))
    u, sigma, xi = model.radial(p.angles)
    below = p.radii <= u
    if np.any(below):
        raise BelowThresholdError(f"{int(below.sum())} point(s) lie on or below the threshold surface")
    nu = sigma * (1.0 + xi)
    nll, _, _ = gp_nll(p.radii - u, nu, xi)
    out = np.log(model.zeta) + (1 - model.d) * np.log(p.radii) + kde_log_density(p.angles, model.kde) - nll
    return out[0] if single else out


def contour_radius(model: SparModel, w, beta: float):
    """Radius at direction ``w`` beyond which the total exceedance
    probability is ``beta``."""
    if not 0.0 < beta <= model.zeta:
        raise ValueError(f"beta must lie in (0, zeta={model.zeta}]")
    u, sigma, xi = model.radial(w)
    return u + gp_quantile_excess(sigma, xi, beta / model.zeta)


def contour_cloud(model: SparModel, grid: SphereGrid | np.ndarray, beta: float) -> np.ndarray:
    """Contour points ``r_beta(w) * w`` for every grid direction.

    Returns a ``(p, d + 1)`` array; the last column is the angular density
    at each direction, so callers can mask poorly supported directions.
    """
    dirs = grid.directions if isinstance(grid, SphereGrid) else np.atleast_2d(grid)
    r = contour_radius(model, dirs, beta)
    dens = np.exp(kde_log_density(dirs, model.kde))
    return np.column_stack([r[:, None] * dirs, dens])


def simulate(model: SparModel, N: int, seed=None, return_tail_mask: bool = False):
    """Draw ``N`` points: ``round(zeta*N)`` from the tail model, the rest
    resampled with replacement from the sub-threshold pool.

    Tail rows come first. Output is in the normalised coordinates the model
    was fitted in.
    """
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    n_tail = int(round(model.zeta * N))
    out = np.empty((N, model.d))
    if n_tail:
        w = sample_kde(model.kde, n_tail, rng)
        u, sigma, xi = model.radial(w)
        U = 1.0 - rng.random(n_tail)  # (0, 1]
        z = gp_quantile_excess(sigma, xi, U)
        out[:n_tail] = (u + z)[:, None] * w
    if N > n_tail:
        pick = rng.integers(len(model.body_pool), size=N - n_tail)
        out[n_tail:] = model.body_pool[pick]
    if return_tail_mask:
        mask = np.zeros(N, dtype=bool)
        mask[:n_tail] = True
        return out, mask
    return out


def fit_spar(
    data,
    zeta: float = DEFAULT_ZETA,
    kappa: float | None = None,
    kappa_grid=DEFAULT_KAPPA_GRID,
    m_pred: int = DEFAULT_M_PRED,
    k_exclude: int = DEFAULT_K_EXCLUDE,
    hidden=DEFAULT_HIDDEN,
    threshold_config: TrainConfig = TrainConfig(),
    gp_config: TrainConfig | None = None,
    seed=0,
    preprocess: dict | None = None,
) -> SparModel:
    """Fit all components to normalised data (rows relative to the origin).

    The angular density and the radial model are fitted independently. With
    ``kappa=None`` the bandwidth is chosen by :func:`optimize_bandwidth`.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    p = to_polar(data)
    d = p.d
    info = {}
    if kappa is None:
        kappa, nll = optimize_bandwidth(p.angles, kappa_grid, m_pred, k_exclude, seed=seed)
        info["kappa_grid"] = np.asarray(kappa_grid, dtype=float).tolist()
        info["kappa_nll"] = nll.tolist()
    kde = KdeModel(p.angles, kappa)
    gp_config = gp_config or threshold_config
    th = fit_threshold(p.angles, p.radii, zeta, MlpArchitecture(d, hidden, 1), threshold_config)
    idx, z = exceedance_set(p.angles, p.radii, th)
    gp = fit_gp(p.angles[idx], z, MlpArchitecture(d, hidden, 2), gp_config)
    body = np.ones(len(p), dtype=bool)
    body[idx] = False
    info.update(
        n=len(p),
        n_exceed=int(idx.size),
        exceedance_fraction=th.exceedance_fraction,
        threshold_degraded=bool(th.degraded),
        gp_degraded=bool(gp.degraded),
    )
    log.info("fitted model: kappa=%g, %d exceedances of %d", kappa, idx.size, len(p))
    return SparModel(zeta, kde, th, gp, data[body].copy(), preprocess, info)


# ---------------------------------------------------------------------------
# storage
#
# Layout:
#   line 1   b"SPARMODEL <version>\n"
#   line 2   decimal byte length of the JSON header, then b"\n"
#   header   UTF-8 JSON: scalars, architectures, preprocessing, and an
#            "arrays" table of {name, shape, offset} plus "payload_sha256"
#   payload  little-endian float64 arrays, C order, concatenated


def _arch_json(arch: MlpArchitecture) -> dict:
    return {"input_dim": arch.input_dim, "hidden_widths": list(arch.hidden_widths), "output_dim": arch.output_dim}


def _params_arrays(prefix: str, params: MlpParams) -> dict:
    out = {}
    for l, (a, b) in enumerate(zip(params.weights, params.biases)):
        out[f"{prefix}.a{l + 1}"] = a
        out[f"{prefix}.b{l + 1}"] = b
    return out


def save(model: SparModel, path) -> None:
    arrays = {"kde.angles": model.kde.angles, "body_pool": model.body_pool}
    arrays.update(_params_arrays("threshold", model.threshold.params))
    arrays.update(_params_arrays("gp", model.gp.params))
    table = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(buf)
        offset += len(buf)
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "library_version": __version__,
        "zeta": model.zeta,
        "kappa": model.kde.kappa,
        "threshold": {
            "arch": _arch_json(model.threshold.arch),
            "transform": "exp",
            "zeta": model.threshold.zeta,
            "degraded": bool(model.threshold.degraded),
            "exceedance_fraction": model.threshold.exceedance_fraction,
        },
        "gp": {
            "arch": _arch_json(model.gp.arch),
            "transform": ["exp", "xi=-0.5+0.6*logistic"],
            "degraded": bool(model.gp.degraded),
        },
        "preprocess": model.preprocess,
        "info": model.info,
        "arrays": table,
        "payload_bytes": len(payload),
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = FORMAT_MAGIC + f" {FORMAT_VERSION}\n{len(hbytes)}\n".encode() + hbytes + payload
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)


def load(path) -> SparModel:
    raw = Path(path).read_bytes()
    try:
        first, rest = raw.split(b"\n", 1)
        magic, version = first.split(b" ")
        if magic != FORMAT_MAGIC:
            raise ModelFormatError("not a model file")
        if int(version) != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format version {int(version)}, expected {FORMAT_VERSION}")
        hlen_txt, rest = rest.split(b"\n", 1)
        hlen = int(hlen_txt)
        header = json.loads(rest[:hlen].decode("utf-8"))
    except ModelFormatError:
        raise
    except (ValueError, UnicodeDecodeError) as exc:
        raise ModelFormatError(f"corrupt model header: {exc}") from None
    payload = rest[hlen:]
    if len(payload) != header["payload_bytes"]:
        raise ModelFormatError(f"payload is {len(payload)} bytes, expected {header['payload_bytes']} (truncated file?)")
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ModelFormatError("payload checksum mismatch")
    arrays = {}
    for entry in header["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=entry["offset"])
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float64)

    def params(prefix, arch):
        L = len(arch.hidden_widths) + 1
        return MlpParams(
            [arrays[f"{prefix}.a{l}"] for l in range(1, L + 1)],
            [arrays[f"{prefix}.b{l}"] for l in range(1, L + 1)],
        )

    def arch(js):
        return MlpArchitecture(js["input_dim"], tuple(js["hidden_widths"]), js["output_dim"])

    tj, gj = header["threshold"], header["gp"]
    ta, ga = arch(tj["arch"]), arch(gj["arch"])
    th = ThresholdModel(ta, params("threshold", ta), tj["zeta"], None, tj["degraded"], tj["exceedance_fraction"])
    gp = GpModel(ga, params("gp", ga), None, gj["degraded"])
    kde = KdeModel(arrays["kde.angles"], header["kappa"])
    return SparModel(header["zeta"], kde, th, gp, arrays["body_pool"], header["preprocess"], header["info"])
