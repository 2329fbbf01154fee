"""Composite training objective: reconstruction, reliable transmission, quantization."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .codebook import quantization_loss
from .errors import ConfigurationError, InputError, ShapeError

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class LossWeights:
    lambda_trans: float = 1.0
    lambda_quant: float = 1.0
    beta_q: float = 0.25

    def __post_init__(self):
        for name in ("lambda_trans", "lambda_quant", "beta_q"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigurationError(f"{name} must be finite and >= 0, got {value}")


@dataclass
class LossBreakdown:
    rec: torch.Tensor
    trans: torch.Tensor
    quant: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("rec", "trans", "quant", "total")}


def recon_loss(original: torch.Tensor, reconstructed: torch.Tensor) -> torch.Tensor:
    """Mean squared error over batch and pixels."""
    if original.shape != reconstructed.shape:
        raise ShapeError(f"shape mismatch {tuple(original.shape)} vs {tuple(reconstructed.shape)}")
    return (original - reconstructed).square().mean()


def trans_loss(true_indices: torch.Tensor, predicted: torch.Tensor) -> torch.Tensor:
    """Cross-entropy of predicted index distributions against the true one-hots.

    Summed over positions and averaged over the batch. ``predicted`` rows must
    be probability vectors.
    """
    if true_indices.shape != predicted.shape:
        raise ShapeError(f"shape mismatch {tuple(true_indices.shape)} vs {tuple(predicted.shape)}")
    with torch.no_grad():
        valid = (predicted >= 0).all() and torch.allclose(
            predicted.sum(-1), torch.ones((), dtype=predicted.dtype), atol=1e-4)
    if not valid:
        raise InputError("predicted rows must be probability distributions")
    nll = -(true_indices * predicted.clamp_min(LOG_FLOOR).log()).sum(-1)
    if nll.ndim <= 1:
        return nll.sum()
    return nll.flatten(1).sum(1).mean()


def composite_loss(rec: torch.Tensor, trans: torch.Tensor, quant: torch.Tensor,
                   weights: LossWeights) -> LossBreakdown:
    total = rec + weights.lambda_trans * trans + weights.lambda_quant * quant
    return LossBreakdown(rec=rec, trans=trans, quant=quant, total=total)


__all__ = [
    "LossWeights", "LossBreakdown", "recon_loss", "trans_loss", "composite_loss",
    "quantization_loss",
]
