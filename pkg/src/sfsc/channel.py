"""LEO satellite relay link: block-Rician fading, Doppler/delay phase and AWGN.

Each hop is modelled as

    y_n = exp(j2π(n·T_s·ν − f·τ)) · g · x_n + z_n

with one Rician draw ``g`` per frame (coherence block) and complex Gaussian
noise whose variance is calibrated against the transmitted frame's empirical
power (E_s/N0 per complex channel symbol).

The 3GPP NTN-TDL-D tap tables are not reproduced. A frame can optionally pass
through a short tapped delay line (``tap_powers``) whose first tap is Rician
and the remaining taps Rayleigh; the default is a single tap.

All randomness comes from explicit integer seeds, so every function here is
safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import torch

from .errors import ConfigurationError, DegenerateChannelError, InputError


@dataclass(frozen=True)
class ChannelConfig:
    rician_k: float = 10.0
    gain_power: float = 1.0
    doppler_hz: float = 0.0
    delay_s: float = 0.0
    carrier_offset_hz: float = 0.0
    symbol_period_s: float = 1e-6
    snr_db: float = 10.0
    tap_powers: tuple[float, ...] = field(default=(1.0,))

    def __post_init__(self):
        if not self.rician_k >= 0:
            raise ConfigurationError(f"rician_k must be >= 0, got {self.rician_k}")
        if not self.gain_power > 0 or not math.isfinite(self.gain_power):
            raise ConfigurationError(f"gain_power must be finite and > 0, got {self.gain_power}")
        if not self.symbol_period_s > 0:
            raise ConfigurationError(f"symbol_period_s must be > 0, got {self.symbol_period_s}")
        if not math.isfinite(self.snr_db):
            raise ConfigurationError(f"snr_db must be finite, got {self.snr_db}")
        for name in ("doppler_hz", "delay_s", "carrier_offset_hz"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigurationError(f"{name} must be finite")
        taps = tuple(float(p) for p in self.tap_powers)
        if not taps or any(not p >= 0 for p in taps) or taps[0] <= 0:
            raise ConfigurationError(f"tap_powers must be non-negative with a positive first tap, got {taps}")
        object.__setattr__(self, "tap_powers", taps)

    def with_snr(self, snr_db: float) -> "ChannelConfig":
        return replace(self, snr_db=float(snr_db))


@dataclass(frozen=True)
class ChannelRealization:
    """One coherence-block draw of the fading gain.

    ``gain`` has the batch shape of the frames it will be applied to; with a
    multi-tap config a trailing tap axis is appended.
    """

    gain: torch.Tensor
    config: ChannelConfig

    @property
    def taps(self) -> int:
        return len(self.config.tap_powers)


def _generator(seed: int) -> torch.Generator:
    return torch.Generator().manual_seed(int(seed))


def _complex_normal(shape, gen: torch.Generator, dtype: torch.dtype) -> torch.Tensor:
    # drawn in float64 so a seed gives the same values for every output dtype
    re = torch.randn(shape, generator=gen, dtype=torch.float64)
    im = torch.randn(shape, generator=gen, dtype=torch.float64)
    return (torch.complex(re, im) / math.sqrt(2.0)).to(dtype)


def rician_gain(k: float, power: float, w: torch.Tensor) -> torch.Tensor:
    """Map standard complex normal draws ``w`` to Rician gains with factor ``k``."""
    if math.isinf(k):
        return torch.full_like(w, math.sqrt(power))
    los = math.sqrt(k / (k + 1.0))
    nlos = math.sqrt(1.0 / (k + 1.0))
    return math.sqrt(power) * (los + nlos * w)


def sample_realization(
    config: ChannelConfig,
    seed: int,
    batch_shape: tuple[int, ...] = (),
    dtype: torch.dtype = torch.complex64,
) -> ChannelRealization:
    """Draw a block-fading gain for every frame in ``batch_shape``."""
    if not isinstance(config, ChannelConfig):
        raise ConfigurationError("config must be a ChannelConfig")
    gen = _generator(seed)
    powers = torch.tensor(config.tap_powers, dtype=torch.float64)
    powers = powers / powers.sum() * config.gain_power
    shape = tuple(batch_shape)
    w = _complex_normal(shape + (len(powers),), gen, torch.complex128)
    first = rician_gain(config.rician_k, float(powers[0]), w[..., 0])
    if len(powers) == 1:
        return ChannelRealization(first.to(dtype), config)
    rest = w[..., 1:] * powers[1:].sqrt()
    gain = torch.cat([first.unsqueeze(-1), rest], dim=-1)
    return ChannelRealization(gain.to(dtype), config)


def phase_ramp(config: ChannelConfig, n: int, dtype: torch.dtype = torch.complex64) -> torch.Tensor:
    """Deterministic factor exp(j2π(n·T_s·ν − f·τ)) for symbols 0..n-1."""
    idx = torch.arange(n, dtype=torch.float64)
    phase = 2 * math.pi * (idx * config.symbol_period_s * config.doppler_hz
                           - config.carrier_offset_hz * config.delay_s)
    return torch.polar(torch.ones_like(phase), phase).to(dtype)


def frame_power(frame: torch.Tensor) -> torch.Tensor:
    """Empirical average power of each frame along the last axis."""
    return frame.abs().square().mean(dim=-1, keepdim=True)


def _check_frame(frame: torch.Tensor) -> None:
    if frame.ndim == 0 or frame.shape[-1] == 0 or frame.numel() == 0:
        raise InputError("frame must contain at least one symbol")


def _fade(frame: torch.Tensor, realization: ChannelRealization) -> torch.Tensor:
    gain = realization.gain.to(frame.dtype)
    if realization.taps == 1:
        return gain.unsqueeze(-1) * frame
    out = torch.zeros_like(frame)
    n = frame.shape[-1]
    for lag in range(min(realization.taps, n)):
        shifted = torch.nn.functional.pad(frame[..., : n - lag], (lag, 0))
        out = out + gain[..., lag].unsqueeze(-1) * shifted
    return out


def apply_channel(frame: torch.Tensor, realization: ChannelRealization, seed: int) -> torch.Tensor:
    """Pass a complex frame through one hop (fading, phase ramp, AWGN).

    The noise variance per symbol is P_x / 10^(snr_db/10) where P_x is the
    empirical power of each input frame. The operation is differentiable in
    ``frame``.
    """
    _check_frame(frame)
    if not frame.is_complex():
        raise InputError("frame must be a complex tensor")
    config = realization.config
    n = frame.shape[-1]
    faded = phase_ramp(config, n, frame.dtype) * _fade(frame, realization)
    variance = frame_power(frame) / 10.0 ** (config.snr_db / 10.0)
    noise = _complex_normal(frame.shape, _generator(seed), frame.dtype)
    return faded + variance.sqrt() * noise


def channel_response(realization: ChannelRealization, n: int, dtype=torch.complex64) -> torch.Tensor:
    """Per-symbol single-tap response h_n = phase_n · g."""
    if realization.taps != 1:
        raise ConfigurationError("per-symbol response is only defined for single-tap channels")
    return phase_ramp(realization.config, n, dtype) * realization.gain.to(dtype).unsqueeze(-1)


def equalize(frame: torch.Tensor, realization: ChannelRealization) -> torch.Tensor:
    """Coherent zero-forcing equalisation y·conj(h_n)/|h_n|^2 (genie CSI)."""
    _check_frame(frame)
    h = channel_response(realization, frame.shape[-1], frame.dtype)
    mag2 = h.abs().square()
    if bool((mag2 == 0).any()):
        raise DegenerateChannelError("cannot equalize a zero channel gain")
    return frame * h.conj() / mag2


def transparent_forward(frame: torch.Tensor) -> torch.Tensor:
    """Amplify-and-forward: rescale every frame to unit average power."""
    _check_frame(frame)
    power = frame_power(frame)
    if bool((power == 0).any()):
        raise DegenerateChannelError("cannot amplify an all-zero frame")
    return frame / power.sqrt()


def empirical_snr_db(clean: torch.Tensor, received: torch.Tensor) -> float:
    """Signal-to-noise ratio of ``received`` relative to a noiseless reference."""
    signal = clean.abs().square().mean()
    noise = (received - clean).abs().square().mean()
    return float(10 * torch.log10(signal / noise))
