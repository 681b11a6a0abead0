"""Run configuration: one TOML file with [data], [nets], [train] and
[sampling] sections, plus per-key command-line overrides ("section.key").
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .sampling import IntegratorConfig
from .training import TrainConfig


@dataclass
class DataConfig:
    category: str = "pliers"
    n_instances: int = 8
    samples_per_instance: int = 60
    n_points: int = 256
    colored: bool = False
    seed: int = 0

    @property
    def point_dim(self) -> int:
        return 6 if self.colored else 3


@dataclass
class NetConfig:
    code_dim: int = 64
    hidden: int = 128
    point_blocks: int = 3
    latent_blocks: int = 2
    encoder_hidden: int = 128
    fourier_sigma: float = 1.0
    fourier_freqs: int = 32
    seed: int = 0


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    nets: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sampling: IntegratorConfig = field(default_factory=IntegratorConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return cls(
            data=DataConfig(**d.get("data", {})),
            nets=NetConfig(**d.get("nets", {})),
            train=TrainConfig(**d.get("train", {})),
            sampling=IntegratorConfig(**d.get("sampling", {})),
        )


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read TOML (all keys optional) and apply 'section.key=value' overrides."""
    raw: dict = {}
    if path is not None:
        with open(Path(path), "rb") as fh:
            raw = tomllib.load(fh)
    for key, value in (overrides or {}).items():
        section, _, name = key.partition(".")
        if not name:
            raise ValueError(f"override {key!r} must look like section.key")
        raw.setdefault(section, {})[name] = value
    return RunConfig.from_dict(raw)


def coerce_override(value: str):
    """Best-effort typing for command-line override values."""
    low = value.lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(value)
    except ValueError:
        pass
    try:
        return float(value)
    except ValueError:
        return value
