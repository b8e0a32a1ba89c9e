"""Run configuration: nested dataclasses read from and written to YAML."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .angular import DEFAULT_K_EXCLUDE, DEFAULT_M_PRED
from .diagnostics import DEFAULT_BLOCK_LEN, DEFAULT_MIN_COUNT, DEFAULT_N_BOOT, DEFAULT_Q_LEVEL, DEFAULT_STRIDE
from .nnet import TrainConfig
from .preprocess import DEFAULT_STEEPNESS_CAP
from .radial import DEFAULT_HIDDEN, DEFAULT_ZETA


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    input: str | None = None
    # role -> CSV column; empty means every column as-is
    columns: dict = field(default_factory=dict)
    origin: str = "physical"


@dataclass
class ModelSection:
    zeta: float = DEFAULT_ZETA
    kappa: float | None = None  # fixed bandwidth; None selects it by CV
    kappa_min: float = 10.0
    kappa_max: float = 1e4
    kappa_count: int = 50
    m_pred: int = DEFAULT_M_PRED
    k_exclude: int = DEFAULT_K_EXCLUDE
    hidden: list = field(default_factory=lambda: list(DEFAULT_HIDDEN))

    def kappa_grid(self) -> np.ndarray:
        return np.logspace(np.log10(self.kappa_min), np.log10(self.kappa_max), self.kappa_count)


@dataclass
class TrainSection:
    learning_rate: float = TrainConfig.learning_rate
    batch_size: int = TrainConfig.batch_size
    max_epochs: int = TrainConfig.max_epochs
    validation_fraction: float = TrainConfig.validation_fraction
    patience: int = TrainConfig.patience
    restart_shrink: float = TrainConfig.restart_shrink
    max_restarts: int = TrainConfig.max_restarts

    def build(self, seed: int) -> TrainConfig:
        return TrainConfig(seed=seed, **dataclasses.asdict(self))


@dataclass
class DiagnosticsSection:
    theta_max_deg: float = 15.0
    grid_m: int = 5
    stride: int = DEFAULT_STRIDE
    min_count: int = DEFAULT_MIN_COUNT
    sim_factor: int = 100
    n_boot: int = DEFAULT_N_BOOT
    block_len: int = DEFAULT_BLOCK_LEN
    zeta_start: float = 0.0125
    zeta_stop: float = 0.25
    zeta_step: float = 0.0125
    q_level: float = DEFAULT_Q_LEVEL
    ci_level: float = 0.95

    def zeta_grid(self) -> np.ndarray:
        k = int(round((self.zeta_stop - self.zeta_start) / self.zeta_step)) + 1
        return np.round(self.zeta_start + self.zeta_step * np.arange(k), 10)


@dataclass
class RunConfig:
    seed: int = 0
    steepness_cap: float = DEFAULT_STEEPNESS_CAP
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    diagnostics: DiagnosticsSection = field(default_factory=DiagnosticsSection)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=False)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def from_dict(cls, d: dict | None) -> "RunConfig":
        return _build(cls, d or {}, "")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = yaml.safe_load(Path(path).read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if d is not None and not isinstance(d, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        return cls.from_dict(d)


def _build(cls, d: dict, where: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in {where or 'top level'}")
    kwargs = {}
    for name, value in d.items():
        sub = _SECTIONS.get((cls, name))
        if sub is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"{where}{name} must be a mapping")
            kwargs[name] = _build(sub, value, f"{where}{name}.")
        else:
            kwargs[name] = value
    return cls(**kwargs)


_SECTIONS = {
    (RunConfig, "data"): DataSection,
    (RunConfig, "model"): ModelSection,
    (RunConfig, "train"): TrainSection,
    (RunConfig, "diagnostics"): DiagnosticsSection,
}
