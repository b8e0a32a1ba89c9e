"""CSV output with a provenance comment block, written atomically."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import pandas as pd

from . import __version__


def provenance_lines(command: str, seed, config_digest: str | None, params: dict | None = None) -> list:
    lines = [
        f"# spar {__version__}",
        f"# command: {command}",
        f"# seed: {seed}",
        f"# config_sha256: {config_digest or 'none'}",
    ]
    for k, v in (params or {}).items():
        lines.append(f"# {k}: {v}")
    return lines


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def write_table(df: pd.DataFrame, path, header_lines=()) -> Path:
    """Write ``df`` as CSV below ``#`` comment lines.

    Floats use the shortest repr that round-trips, so re-reading with
    ``pd.read_csv(path, comment="#")`` recovers them exactly.
    """
    body = df.to_csv(index=False, lineterminator="\n")
    text = "".join(f"{line}\n" for line in header_lines) + body
    atomic_write_text(path, text)
    return Path(path)


def read_table(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")
