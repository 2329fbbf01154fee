"""Semantic forwarding over a dual-hop LEO satellite relay, with codebook-split multiple access."""

from .channel import ChannelConfig, apply_channel, equalize, sample_realization, transparent_forward
from .codebook import Codebook, CommonOrthogonalCodebook, dequantize, differentiable_onehot, vq_assign
from .errors import (CapabilityError, CheckpointError, ConfigurationError, DegenerateChannelError, InputError,
                     ShapeError, TrainingError)
from .losses import LossBreakdown, LossWeights, composite_loss
from .mdma import CSMDMASystem, MdmaConfig
from .metrics import ms_ssim, psnr, rate
from .semnet import NetworkConfig
from .system import STAGES, HopSpec, SFSCSystem

__all__ = [
    "CSMDMASystem", "CapabilityError", "ChannelConfig", "CheckpointError", "Codebook", "CommonOrthogonalCodebook",
    "ConfigurationError", "DegenerateChannelError", "HopSpec", "InputError", "LossBreakdown", "LossWeights",
    "MdmaConfig", "NetworkConfig", "SFSCSystem", "STAGES", "ShapeError", "TrainingError", "apply_channel",
    "composite_loss", "dequantize", "differentiable_onehot", "equalize", "ms_ssim", "psnr", "rate",
    "sample_realization", "transparent_forward", "vq_assign",
]
