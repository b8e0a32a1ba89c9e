"""Data ingestion and metocean preprocessing.

Wind and wave records (``hs``, ``tm``, ``wave_dir``, ``u10``, ``wind_dir``)
become five normalised variables

    X1 = Ux / std(Ux),  X2 = Uy / std(Uy),
    X3 = Hx / std(Hx),  X4 = Hy / std(Hy),
    X5 = (log Tm - mean(log Tm)) / std(log Tm)

with ``Hx = Hs cos(theta)``, ``Hy = Hs sin(theta)`` and likewise for wind.
Directions are compass degrees (clockwise from North, direction going to)
and enter the sine and cosine as-is, so ``Hx`` points North and ``Hy`` East.
Other data sets are handled as generic numeric columns.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

log = logging.getLogger(__name__)

GRAVITY = 9.81
DEFAULT_STEEPNESS_CAP = 0.1
METOCEAN_ROLES = ("hs", "tm", "wave_dir", "u10", "wind_dir")
METOCEAN_DERIVED = ("ux", "uy", "hx", "hy", "lt")
DDOF = 1


class IngestError(ValueError):
    pass


@dataclass
class IngestReport:
    n_rows: int
    nan_counts: dict


def ingest(path, columns: dict | None = None) -> tuple[pd.DataFrame, IngestReport]:
    """Read a CSV with a header row and bind columns to roles.

    ``columns`` maps role name to CSV column; with ``None`` every column is
    kept under its own name. Empty cells become NaN and are counted in the
    report; anything else that is not a number is an error naming the line
    and column. Lines starting with ``#`` are ignored.
    """
    path = Path(path)
    try:
        df = pd.read_csv(path, comment="#", dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        raise IngestError(f"{path}: file is empty") from None
    except FileNotFoundError:
        raise IngestError(f"{path}: no such file") from None
    if df.shape[1] == 0 or len(df) == 0:
        raise IngestError(f"{path}: no data rows")
    df.columns = [c.strip() for c in df.columns]
    mapping = dict(columns) if columns else {c: c for c in df.columns}
    missing = [c for c in mapping.values() if c not in df.columns]
    if missing:
        raise IngestError(f"{path}: missing column(s) {', '.join(missing)}; found {', '.join(df.columns)}")
    out = {}
    for role, col in mapping.items():
        txt = df[col].str.strip()
        try:
            # Python's float() is correctly rounded; pandas' fast parser is not
            out[role] = np.asarray(txt.mask(txt == "", "nan").to_numpy(), dtype=float)
        except ValueError:
            bad = pd.to_numeric(txt, errors="coerce").isna() & (txt != "") & (txt.str.lower() != "nan")
            i = int(np.flatnonzero(bad.to_numpy())[0])
            # +2: header line, 1-based lines (comment lines are not counted)
            raise IngestError(f"{path}: non-numeric value {df[col].iloc[i]!r} in column {col!r} at data row {i + 1} (line {i + 2})") from None
    frame = pd.DataFrame(out)
    report = IngestReport(len(frame), {k: int(v) for k, v in frame.isna().sum().items()})
    if any(report.nan_counts.values()):
        log.warning("%s: missing values %s", path, report.nan_counts)
    return frame, report


def is_metocean(frame: pd.DataFrame) -> bool:
    return all(r in frame.columns for r in METOCEAN_ROLES)


def compass_components(magnitude, direction_deg):
    """``(m cos(theta), m sin(theta))`` with ``theta`` in compass degrees."""
    th = np.radians(np.asarray(direction_deg, dtype=float))
    m = np.asarray(magnitude, dtype=float)
    return m * np.cos(th), m * np.sin(th)


def compass_direction(x, y):
    """Inverse of :func:`compass_components`: degrees in ``[0, 360)``."""
    return np.degrees(np.arctan2(y, x)) % 360.0


def derive_components(raw: pd.DataFrame) -> pd.DataFrame:
    """Directional components and log period from a metocean table."""
    missing = [r for r in METOCEAN_ROLES if r not in raw.columns]
    if missing:
        raise ValueError(f"missing metocean column(s): {', '.join(missing)}")
    tm = raw["tm"].to_numpy(dtype=float)
    if np.any(tm <= 0):
        i = int(np.flatnonzero(tm <= 0)[0])
        raise ValueError(f"mean period must be positive (row {i + 1}: {tm[i]!r})")
    ux, uy = compass_components(raw["u10"], raw["wind_dir"])
    hx, hy = compass_components(raw["hs"], raw["wave_dir"])
    return pd.DataFrame({"ux": ux, "uy": uy, "hx": hx, "hy": hy, "lt": np.log(tm)})


def physical_from_components(derived: pd.DataFrame) -> pd.DataFrame:
    """Magnitudes, period and compass directions from derived components."""
    return pd.DataFrame(
        {
            "hs": np.hypot(derived["hx"], derived["hy"]),
            "tm": np.exp(derived["lt"]),
            "wave_dir": compass_direction(derived["hx"], derived["hy"]),
            "u10": np.hypot(derived["ux"], derived["uy"]),
            "wind_dir": compass_direction(derived["ux"], derived["uy"]),
        }
    )


@dataclass
class PreprocessSpec:
    """Per-column scales and origin offsets: ``X = (v - offset) / scale``."""

    columns: list
    scales: list
    offsets: list
    kind: str = "generic"  # or "metocean"
    origin: str = "physical"
    ddof: int = DDOF
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.columns) == len(self.scales) == len(self.offsets):
            raise ValueError("columns, scales and offsets differ in length")
        if any(not s > 0 for s in self.scales):
            raise ValueError("scales must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessSpec":
        return cls(**d)

    def apply(self, frame: pd.DataFrame) -> np.ndarray:
        V = frame[list(self.columns)].to_numpy(dtype=float)
        return (V - np.asarray(self.offsets)) / np.asarray(self.scales)


def normalize(derived: pd.DataFrame, origin: str = "physical", kind: str | None = None):
    """Standardise columns and fix the origin.

    ``origin="physical"`` keeps directional components at zero and centres only
    the log-period column ``lt`` (for generic data nothing is centred);
    ``origin="mean"`` centres every column. Returns ``(X, spec)``.
    """
    if origin not in ("physical", "mean"):
        raise ValueError("origin must be 'physical' or 'mean'")
    cols = list(derived.columns)
    V = derived.to_numpy(dtype=float)
    scales = np.std(V, axis=0, ddof=DDOF)
    flat = [c for c, s in zip(cols, scales) if not s > 0]
    if flat:
        raise ValueError(f"zero-variance column(s): {', '.join(map(str, flat))}")
    if origin == "mean":
        offsets = V.mean(axis=0)
    else:
        offsets = np.array([V[:, i].mean() if c == "lt" else 0.0 for i, c in enumerate(cols)])
    if kind is None:
        kind = "metocean" if cols == list(METOCEAN_DERIVED) else "generic"
    spec = PreprocessSpec(cols, scales.tolist(), offsets.tolist(), kind, origin)
    return (V - offsets) / scales, spec


def denormalize(X, spec: PreprocessSpec) -> pd.DataFrame:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    V = X * np.asarray(spec.scales) + np.asarray(spec.offsets)
    return pd.DataFrame(V, columns=list(spec.columns))


def prepare(raw: pd.DataFrame, origin: str = "physical"):
    """Raw table to ``(X, spec)``: metocean tables go through
    :func:`derive_components`, anything else is normalised directly."""
    raw = raw.dropna()
    if is_metocean(raw):
        return normalize(derive_components(raw), origin, "metocean")
    return normalize(raw, origin, "generic")


def apply_spec(raw: pd.DataFrame, spec: PreprocessSpec) -> np.ndarray:
    """Normalise new raw data with an existing spec."""
    raw = raw.dropna()
    frame = derive_components(raw) if spec.kind == "metocean" else raw
    return spec.apply(frame)


def to_physical(X, spec: PreprocessSpec) -> pd.DataFrame:
    """Normalised rows back to the raw variables (metocean tables also get
    their components)."""
    derived = denormalize(X, spec)
    if spec.kind != "metocean":
        return derived
    return pd.concat([physical_from_components(derived), derived], axis=1)


def steepness(hs, tm, g: float = GRAVITY):
    """Wave steepness ``2 pi Hs / (g Tm^2)``."""
    tm = np.asarray(tm, dtype=float)
    if np.any(tm <= 0):
        raise ValueError("mean period must be positive")
    return 2.0 * np.pi * np.asarray(hs, dtype=float) / (g * tm**2)


def filter_steepness(frame: pd.DataFrame, s_max: float = DEFAULT_STEEPNESS_CAP):
    """Drop rows with steepness above ``s_max``; returns ``(kept, removed_fraction)``."""
    s = steepness(frame["hs"], frame["tm"])
    keep = ~(s > s_max)
    removed = 1.0 - keep.mean() if len(frame) else 0.0
    return frame.loc[keep].reset_index(drop=True), float(removed)
