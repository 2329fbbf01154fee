"""Run configuration: one YAML file, grouped into network / channel / loss / training keys."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from ..channel import ChannelConfig
from ..errors import ConfigurationError
from ..losses import LossWeights
from ..mdma import MdmaConfig
from ..semnet import NetworkConfig

MODES = ("sfsc", "csmdma", "tm_deepjscc", "rm_deepjscc")
FINETUNE_GROUPS = ("all", "relay_decoder")
ENV_OUT_DIR = "SFSC_OUT_DIR"
ENV_WORKERS = "SFSC_WORKERS"


@dataclass(frozen=True)
class SnrPolicy:
    """Train-time SNR: ``fixed`` uses each hop's configured snr_db, ``uniform`` draws from [low, high]."""

    kind: str = "fixed"
    low: float = -10.0
    high: float = 10.0

    def __post_init__(self):
        if self.kind not in ("fixed", "uniform"):
            raise ConfigurationError(f"unknown SNR policy {self.kind!r}")
        if not self.low <= self.high:
            raise ConfigurationError(f"SNR range needs low <= high, got [{self.low}, {self.high}]")

    def draw(self, rng: np.random.Generator, ul: ChannelConfig, dl: ChannelConfig) -> tuple[float, float]:
        if self.kind == "fixed":
            return ul.snr_db, dl.snr_db
        return float(rng.uniform(self.low, self.high)), float(rng.uniform(self.low, self.high))


@dataclass(frozen=True)
class AnalogConfig:
    """Small analog (DeepJSCC-style) baseline autoencoder."""

    width: int = 32
    channels: int = 8
    downsample_factor: int = 4

    def __post_init__(self):
        d = self.downsample_factor
        if d < 2 or d & (d - 1):
            raise ConfigurationError(f"analog downsample_factor must be a power of 2 >= 2, got {d}")
        if self.width < 1 or self.channels < 2 or self.channels % 2:
            raise ConfigurationError("analog width must be >= 1 and channels a positive even number")


@dataclass(frozen=True)
class EvalConfig:
    snr_points: tuple[float, ...] = (-10.0, -5.0, 0.0, 5.0, 10.0)
    grid: str = "diagonal"
    seed: int = 12345
    batch_size: int = 50

    def __post_init__(self):
        if self.grid not in ("diagonal", "full"):
            raise ConfigurationError(f"grid must be 'diagonal' or 'full', got {self.grid!r}")
        object.__setattr__(self, "snr_points", tuple(float(s) for s in self.snr_points))

    def pairs(self) -> list[tuple[float, float]]:
        if self.grid == "diagonal":
            return [(s, s) for s in self.snr_points]
        return [(u, d) for u in self.snr_points for d in self.snr_points]


@dataclass(frozen=True)
class RunConfig:
    mode: str = "sfsc"
    network: NetworkConfig = field(default_factory=NetworkConfig)
    channel_ul: ChannelConfig = field(default_factory=ChannelConfig)
    channel_dl: ChannelConfig = field(default_factory=ChannelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    mdma: MdmaConfig = field(default_factory=MdmaConfig)
    analog: AnalogConfig = field(default_factory=AnalogConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    train_snr_policy: SnrPolicy = field(default_factory=SnrPolicy)
    epochs: int = 30
    pretrain_epochs: int = 0
    relay_warmup_epochs: int = 0
    # parameters updated in the end-to-end stage: "all", or "relay_decoder" to keep
    # the pretrained encoder and codebook fixed
    finetune: str = "all"
    # relabel the pretrained codebook so symbol errors land on nearby codewords
    index_assignment: bool = False
    batch_size: int = 16
    learning_rate: float = 1e-4
    pretrain_learning_rate: float = 1e-3
    relay_warmup_learning_rate: float = 2e-3
    cosine_decay: bool = True
    seed: int = 0
    dataset_path: str = "synthetic"
    synthetic_count: int = 1000
    split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    warm_start: str | None = None
    run_id: str = "run"
    out_dir: str = "runs"
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.pretrain_epochs < 0 or self.relay_warmup_epochs < 0:
            raise ConfigurationError("pretrain_epochs and relay_warmup_epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.finetune not in FINETUNE_GROUPS:
            raise ConfigurationError(f"finetune must be one of {FINETUNE_GROUPS}, got {self.finetune!r}")
        for name in ("learning_rate", "pretrain_learning_rate", "relay_warmup_learning_rate"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be > 0")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        object.__setattr__(self, "split_ratios", tuple(float(r) for r in self.split_ratios))
        self.mdma.validate(self.network)

    def to_dict(self) -> dict[str, Any]:
        return _plain(asdict(self))

    @property
    def output_dir(self) -> Path:
        return Path(self.out_dir) / self.run_id


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_NESTED = {
    "network": NetworkConfig,
    "channel_ul": ChannelConfig,
    "channel_dl": ChannelConfig,
    "weights": LossWeights,
    "mdma": MdmaConfig,
    "analog": AnalogConfig,
    "evaluation": EvalConfig,
    "train_snr_policy": SnrPolicy,
}


def _build(cls, data: dict[str, Any] | None, where: str):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {sorted(unknown)}")
    for key, value in data.items():
        if isinstance(value, list):
            data[key] = tuple(value)
    return cls(**data)


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    data = dict(data or {})
    top = {f.name for f in fields(RunConfig)}
    unknown = set(data) - top
    if unknown:
        raise ConfigurationError(f"unknown top-level key(s): {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if key in _NESTED:
            kwargs[key] = _build(_NESTED[key], value, key)
        elif isinstance(value, list):
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except TypeError as err:
        raise ConfigurationError(str(err)) from None


def load_config(path: str | Path | None = None, seed: int | None = None, **overrides) -> RunConfig:
    """Read a YAML run config (defaults when ``path`` is None) and apply env/CLI overrides."""
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
    cfg = config_from_dict(data)
    env = {}
    if os.environ.get(ENV_OUT_DIR):
        env["out_dir"] = os.environ[ENV_OUT_DIR]
    if os.environ.get(ENV_WORKERS):
        env["workers"] = int(os.environ[ENV_WORKERS])
    if seed is not None:
        env["seed"] = int(seed)
    env.update({k: v for k, v in overrides.items() if v is not None})
    return replace(cfg, **env) if env else cfg


def dump_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg.to_dict(), fh, sort_keys=False)
