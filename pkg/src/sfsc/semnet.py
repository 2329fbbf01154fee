"""Neural blocks: semantic encoder/decoder, relay networks, FiLM conditioning, CSG.

Layer plan (full scale, per module)::

    encoder    Conv(3,W,4,2,1) · 4×Conv(W,W,3) · 2×ResBlock(W) · Conv(W,N,1)
    relay net  Conv(2,R,3) · [ResBlock(R) · FiLM]×3 · Conv(R,K,1)
    FiLM gen   Conv(3,2R,3) · Conv(2R,2R,3) · Conv(2R,2R,1)
    decoder    Conv(N,W,1) · 2×ResBlock(W) · 4×ConvT(W,W,3) · ConvT(W,3,4,2,1)

with W=128, N=256, R=64 at full scale. The relay nets (semantic forwarder and
index restorer) read the received symbols as a 2-channel I/Q map; the SNR only
enters through the FiLM generator, whose input stack is [snr map, grid-x, grid-y].
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codebook import is_onehot
from .errors import ConfigurationError, InputError, ShapeError

SNR_SCALE_DB = 10.0


@dataclass(frozen=True)
class NetworkConfig:
    image_size: int = 64
    downsample_factor: int = 2
    base_width: int = 32
    feature_dim: int = 64
    codebook_size: int = 16
    constellation: str = "qam"
    relay_width: int = 32
    film_blocks: int = 3
    encoder_convs: int = 1
    res_blocks: int = 2
    vq_temperature: float = 0.01
    estimator: str = "reinmax"
    # receivers divide out the known fading gain before their networks see the I/Q map
    coherent_rx: bool = False

    def __post_init__(self):
        d = self.downsample_factor
        if d < 1 or d & (d - 1):
            raise ConfigurationError(f"downsample_factor must be a power of 2, got {d}")
        if self.image_size % d:
            raise ConfigurationError("image_size must be divisible by downsample_factor")
        if self.codebook_size < 2:
            raise ConfigurationError("codebook_size must be >= 2")
        if self.constellation not in ("qam", "psk"):
            raise ConfigurationError(f"unknown constellation {self.constellation!r}")
        if self.constellation == "qam":
            side = math.isqrt(self.codebook_size)
            if side * side != self.codebook_size or side & (side - 1):
                raise ConfigurationError(
                    f"square QAM needs K = 4^m (constellation order equals codebook size), got {self.codebook_size}")
        if self.estimator not in ("reinmax", "st", "soft"):
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if min(self.base_width, self.feature_dim, self.relay_width, self.film_blocks) < 1:
            raise ConfigurationError("widths and block counts must be positive")

    @property
    def latent_side(self) -> int:
        return self.image_size // self.downsample_factor

    @property
    def positions(self) -> int:
        return self.latent_side ** 2

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def full_scale(cls, codebook_size: int = 64) -> "NetworkConfig":
        return cls(image_size=512, base_width=128, feature_dim=256, codebook_size=codebook_size,
                   constellation="qam" if math.isqrt(codebook_size) ** 2 == codebook_size else "psk",
                   relay_width=64, encoder_convs=4)


# --------------------------------------------------------------------------
# constellation symbol generator


def _gray_position(code: int) -> int:
    """Position along an axis whose Gray label is ``code``."""
    pos = 0
    while code:
        pos ^= code
        code >>= 1
    return pos


def constellation_points(order: int, kind: str = "qam") -> torch.Tensor:
    """Unit-average-energy constellation indexed by codeword index.

    Square QAM is laid out row-major (top row first, left to right) with each
    axis Gray-labelled, so index k = row * sqrt(K) + col. For QPSK this gives
    index 1 -> (1+j)/sqrt(2). PSK uses a Gray-labelled ring.
    """
    if kind == "qam":
        side = math.isqrt(order)
        if side * side != order or side & (side - 1):
            raise ConfigurationError(f"square QAM order must be 4^m, got {order}")
        pts = []
        for k in range(order):
            row, col = divmod(k, side)
            pts.append(complex(2 * _gray_position(col) - (side - 1), (side - 1) - 2 * _gray_position(row)))
        pts = torch.tensor(pts, dtype=torch.complex128)
    elif kind == "psk":
        pts = torch.zeros(order, dtype=torch.complex128)
        for p in range(order):
            angle = 2 * math.pi * p / order + math.pi / order
            pts[p ^ (p >> 1)] = complex(math.cos(angle), math.sin(angle))
    else:
        raise ConfigurationError(f"unknown constellation {kind!r}")
    pts = pts / pts.abs().square().mean().sqrt()
    return pts.to(torch.complex64)


def modulate(indices: torch.Tensor, points: torch.Tensor, strict: bool = False) -> torch.Tensor:
    """Map index rows to constellation points and normalize each frame to unit power.

    ``indices`` is (..., M, K); the frame is (..., M). Soft rows give the
    probability-weighted point; ``strict`` rejects anything but one-hot rows.
    """
    if indices.shape[-1] != points.shape[0]:
        raise ConfigurationError(
            f"index grid has K={indices.shape[-1]} but constellation order is {points.shape[0]}")
    if strict and not is_onehot(indices):
        raise InputError("evaluation-mode modulation requires one-hot index rows")
    real_dtype = indices.dtype if indices.is_floating_point() else torch.float32
    pts = points.to(torch.complex128 if real_dtype == torch.float64 else torch.complex64)
    re = indices.to(real_dtype) @ pts.real.to(real_dtype)
    im = indices.to(real_dtype) @ pts.imag.to(real_dtype)
    frame = torch.complex(re, im)
    power = frame.abs().square().mean(-1, keepdim=True)
    return frame / power.sqrt()


def to_iq(frame: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """(B, M) complex frame -> (B, 2, H, W) real I/Q map, row-major."""
    if frame.shape[-1] != height * width:
        raise ShapeError(f"frame length {frame.shape[-1]} != {height}x{width}")
    iq = torch.stack([frame.real, frame.imag], dim=-2)
    return iq.reshape(*frame.shape[:-1], 2, height, width)


def from_iq(iq: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`to_iq`."""
    flat = iq.flatten(-2)
    return torch.complex(flat[..., 0, :], flat[..., 1, :])


def grid_to_map(grid: torch.Tensor, height: int, width: int) -> torch.Tensor:
    """(B, M, C) position grid -> (B, C, H, W) feature map."""
    if grid.shape[-2] != height * width:
        raise ShapeError(f"grid has {grid.shape[-2]} positions, expected {height}x{width}")
    return grid.transpose(-1, -2).reshape(*grid.shape[:-2], grid.shape[-1], height, width)


def map_to_grid(fmap: torch.Tensor) -> torch.Tensor:
    return fmap.flatten(-2).transpose(-1, -2)


# --------------------------------------------------------------------------
# building blocks


class ResBlock(nn.Module):
    """Pre-activation residual block with two 3x3 convolutions."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        return x + self.conv2(F.relu(self.conv1(F.relu(x))))


def coordinate_grid(height: int, width: int, dtype=torch.float32) -> torch.Tensor:
    """(2, H, W) normalized coordinates spanning [-1, 1] along each axis."""
    ys = torch.linspace(-1.0, 1.0, height, dtype=dtype) if height > 1 else torch.zeros(1, dtype=dtype)
    xs = torch.linspace(-1.0, 1.0, width, dtype=dtype) if width > 1 else torch.zeros(1, dtype=dtype)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack([gx, gy])


def conditioning_stack(snr_db, height: int, width: int, dtype=torch.float32) -> torch.Tensor:
    """FiLM generator input [snr map, grid-x, grid-y] for each SNR value, (B, 3, H, W)."""
    snr = torch.as_tensor(snr_db, dtype=dtype).reshape(-1)
    if not torch.isfinite(snr).all():
        raise InputError("snr_db must be finite")
    grid = coordinate_grid(height, width, dtype).expand(snr.shape[0], 2, height, width)
    snr_map = (snr / SNR_SCALE_DB).reshape(-1, 1, 1, 1).expand(-1, 1, height, width)
    return torch.cat([snr_map, grid], dim=1)


@dataclass
class FilmParams:
    gamma: torch.Tensor
    beta: torch.Tensor


def film_apply(features: torch.Tensor, params: FilmParams) -> torch.Tensor:
    """Elementwise gamma·F + beta with per-channel, per-position factors."""
    try:
        shape = torch.broadcast_shapes(features.shape, params.gamma.shape, params.beta.shape)
    except RuntimeError as err:
        raise ShapeError(str(err)) from None
    if shape != features.shape:
        raise ShapeError(f"FiLM parameters {tuple(params.gamma.shape)} do not match features {tuple(features.shape)}")
    return params.gamma * features + params.beta


class FilmGenerator(nn.Module):
    """Produces per-position (gamma, beta) for a ``width``-channel feature map.

    The last layer starts at zero, so gamma = 1 and beta = 0 before training.
    """

    def __init__(self, width: int):
        super().__init__()
        hidden = 2 * width
        self.width = width
        self.conv1 = nn.Conv2d(3, hidden, 3, 1, 1)
        self.conv2 = nn.Conv2d(hidden, hidden, 3, 1, 1)
        self.out = nn.Conv2d(hidden, 2 * width, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, cond: torch.Tensor) -> FilmParams:
        h = F.relu(self.conv1(cond))
        h = F.relu(self.conv2(h))
        out = self.out(h)
        return FilmParams(gamma=1.0 + out[:, : self.width], beta=out[:, self.width:])


class RelayNet(nn.Module):
    """Semantic forwarder / index restorer: I/Q map + SNR -> per-position scores over K."""

    def __init__(self, width: int, classes: int, blocks: int = 3, in_channels: int = 2):
        super().__init__()
        self.head = nn.Conv2d(in_channels, width, 3, 1, 1)
        self.blocks = nn.ModuleList(ResBlock(width) for _ in range(blocks))
        self.film = FilmGenerator(width)
        self.tail = nn.Conv2d(width, classes, 1)

    def forward(self, iq: torch.Tensor, snr_db) -> torch.Tensor:
        """Return logits of shape (B, M, K)."""
        b, _, h, w = iq.shape
        params = self.film(conditioning_stack(snr_db, h, w, iq.dtype))
        if params.gamma.shape[0] not in (1, b):
            raise ShapeError("one SNR value per batch element (or a single shared value) is required")
        x = self.head(iq)
        for block in self.blocks:
            x = film_apply(block(x), params)
        return map_to_grid(self.tail(F.relu(x)))


class SemanticEncoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers: list[nn.Module] = []
        in_ch = 3
        for _ in range(int(math.log2(cfg.downsample_factor))):
            layers += [nn.Conv2d(in_ch, w, 4, 2, 1), nn.ReLU()]
            in_ch = w
        if in_ch != w:
            layers += [nn.Conv2d(in_ch, w, 3, 1, 1), nn.ReLU()]
        for _ in range(cfg.encoder_convs):
            layers += [nn.Conv2d(w, w, 3, 1, 1), nn.ReLU()]
        layers += [ResBlock(w) for _ in range(cfg.res_blocks)]
        layers += [nn.ReLU(), nn.Conv2d(w, cfg.feature_dim, 1)]
        self.net = nn.Sequential(*layers)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        """(B, 3, S, S) image in [0, 1] -> (B, M, N) feature grid."""
        check_image(image, self.cfg.image_size)
        return map_to_grid(self.net(image))


class SemanticDecoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.base_width
        layers: list[nn.Module] = [nn.Conv2d(cfg.feature_dim, w, 1)]
        layers += [ResBlock(w) for _ in range(cfg.res_blocks)]
        layers += [nn.ReLU()]
        for _ in range(cfg.encoder_convs):
            layers += [nn.ConvTranspose2d(w, w, 3, 1, 1), nn.ReLU()]
        ups = int(math.log2(cfg.downsample_factor))
        for i in range(ups):
            out = 3 if i == ups - 1 else w
            layers += [nn.ConvTranspose2d(w, out, 4, 2, 1)]
            if out != 3:
                layers += [nn.ReLU()]
        if ups == 0:
            layers += [nn.Conv2d(w, 3, 3, 1, 1)]
        self.net = nn.Sequential(*layers)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """(B, M, N) feature grid -> (B, 3, S, S) image squashed into [0, 1]."""
        side = self.cfg.latent_side
        if features.ndim != 3 or features.shape[1:] != (side * side, self.cfg.feature_dim):
            raise ShapeError(
                f"decoder expects (B, {side * side}, {self.cfg.feature_dim}), got {tuple(features.shape)}")
        return torch.sigmoid(self.net(grid_to_map(features, side, side)))


def check_image(image: torch.Tensor, size: int) -> None:
    if image.ndim != 4 or image.shape[1:] != (3, size, size):
        raise InputError(f"expected images of shape (B, 3, {size}, {size}), got {tuple(image.shape)}")
    if not torch.isfinite(image).all() or image.min() < 0 or image.max() > 1:
        raise InputError("pixel values must lie in [0, 1]")


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def parameter_report(model: nn.Module) -> str:
    """Layer-by-layer trainable parameter listing with a total line."""
    lines = []
    for name, module in model.named_modules():
        own = sum(p.numel() for p in module.parameters(recurse=False) if p.requires_grad)
        if own:
            lines.append(f"{name:<48s} {type(module).__name__:<18s} {own:>12,d}")
    lines.append(f"{'total':<48s} {'':<18s} {count_parameters(model):>12,d}")
    return "\n".join(lines)
