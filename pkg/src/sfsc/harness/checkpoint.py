"""Versioned checkpoint files: model + optimizer state with a config snapshot."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch

from ..errors import CheckpointError

FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model_state: dict[str, torch.Tensor]
    config: dict[str, Any]
    epoch: int
    optimizer_state: dict | None = None
    log: list[dict] | None = None
    version: int = FORMAT_VERSION


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save({
            "version": ckpt.version,
            "config": ckpt.config,
            "epoch": ckpt.epoch,
            "model": ckpt.model_state,
            "optimizer": ckpt.optimizer_state,
            "log": ckpt.log or [],
        }, path)
    except OSError as err:
        raise OSError(f"cannot write checkpoint {path}: {err}") from err
    return path


def load_checkpoint(path: str | Path, expect_network: dict | None = None,
                    expect_mode: str | None = None) -> Checkpoint:
    """Read a checkpoint, rejecting unknown versions and mismatched network configs."""
    try:
        raw = torch.load(Path(path), map_location="cpu", weights_only=False)
    except FileNotFoundError:
        raise
    except Exception as err:  # torch raises a variety of unpickling errors
        raise CheckpointError(f"unreadable checkpoint {path}: {err}") from err
    if not isinstance(raw, dict) or raw.get("version") != FORMAT_VERSION:
        found = raw.get("version") if isinstance(raw, dict) else None
        raise CheckpointError(f"checkpoint version {found!r} is not supported (expected {FORMAT_VERSION})")
    config = raw["config"]
    if expect_network is not None and config.get("network") != expect_network:
        raise CheckpointError("checkpoint was saved with a different network configuration")
    if expect_mode is not None and config.get("mode") != expect_mode:
        raise CheckpointError(f"checkpoint mode {config.get('mode')!r} != expected {expect_mode!r}")
    return Checkpoint(raw["model"], config, raw["epoch"], raw.get("optimizer"), raw.get("log"), raw["version"])
