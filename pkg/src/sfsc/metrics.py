"""Image quality and rate metrics."""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW_SIZE = 11
WINDOW_SIGMA = 1.5
K1, K2 = 0.01, 0.03


def psnr(original: torch.Tensor, reconstructed: torch.Tensor, max_value: float = 1.0) -> float:
    """10·log10(MAX²/MSE) over the whole tensor; identical inputs give +inf."""
    if original.shape != reconstructed.shape:
        raise ShapeError(f"shape mismatch {tuple(original.shape)} vs {tuple(reconstructed.shape)}")
    mse = float((original.double() - reconstructed.double()).square().mean())
    if mse == 0:
        return math.inf
    return 10 * math.log10(max_value ** 2 / mse)


def psnr_per_image(original: torch.Tensor, reconstructed: torch.Tensor, max_value: float = 1.0) -> torch.Tensor:
    mse = (original.double() - reconstructed.double()).square().flatten(1).mean(1)
    return 10 * torch.log10(max_value ** 2 / mse)


def rate(channel_uses: int, image_dims: tuple[int, int] | tuple[int, int, int]) -> float:
    """Channel uses per source dimension, n / (H·W·C) with C = 3 by default."""
    h, w, c = (*image_dims, 3) if len(image_dims) == 2 else image_dims
    if channel_uses <= 0 or min(h, w, c) <= 0:
        raise ConfigurationError("rate needs positive integers")
    return channel_uses / (h * w * c)


def _gaussian_window(dtype) -> torch.Tensor:
    coords = torch.arange(WINDOW_SIZE, dtype=torch.float64) - WINDOW_SIZE // 2
    g = torch.exp(-coords.square() / (2 * WINDOW_SIGMA ** 2))
    g = g / g.sum()
    return torch.outer(g, g).to(dtype)


def max_scales(height: int, width: int) -> int:
    """Largest scale count (<= 5) whose coarsest image still fits the 11x11 window."""
    scales = 0
    h, w = height, width
    while scales < len(MS_SSIM_WEIGHTS) and min(h, w) >= WINDOW_SIZE:
        scales += 1
        h, w = (h + 1) // 2, (w + 1) // 2
    return scales


def _ssim_components(x, y, window, data_range):
    c = x.shape[1]
    kernel = window.expand(c, 1, *window.shape)

    def blur(t):
        return F.conv2d(t, kernel, groups=c)

    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x ** 2
    var_y = blur(y * y) - mu_y ** 2
    cov = blur(x * y) - mu_x * mu_y
    cs = (2 * cov + c2) / (var_x + var_y + c2)
    lum = (2 * mu_x * mu_y + c1) / (mu_x ** 2 + mu_y ** 2 + c1)
    return (lum * cs).flatten(2).mean(-1), cs.flatten(2).mean(-1)


def ms_ssim(original: torch.Tensor, reconstructed: torch.Tensor, data_range: float = 1.0,
            scales: int | None = None) -> torch.Tensor:
    """Multi-scale SSIM per image, shape (B,).

    Contrast-structure terms of the finer scales and the full SSIM of the
    coarsest scale are combined as a weighted geometric product. Images too
    small for five scales use fewer, with the weights renormalized.
    """
    if original.shape != reconstructed.shape or original.ndim != 4:
        raise ShapeError("ms_ssim expects two (B, C, H, W) tensors of equal shape")
    h, w = original.shape[-2:]
    available = max_scales(h, w)
    if scales is None:
        scales = available
    if scales < 1 or scales > available:
        raise ConfigurationError(f"{h}x{w} images support at most {available} MS-SSIM scales, requested {scales}")
    x = original.double()
    y = reconstructed.double()
    window = _gaussian_window(x.dtype)
    weights = torch.tensor(MS_SSIM_WEIGHTS[:scales], dtype=x.dtype)
    weights = weights / weights.sum()
    factors = []
    for level in range(scales):
        ssim_val, cs = _ssim_components(x, y, window, data_range)
        if level < scales - 1:
            factors.append(cs.clamp_min(0))
            pad = (0, x.shape[-1] % 2, 0, x.shape[-2] % 2)
            x = F.avg_pool2d(F.pad(x, pad), 2) if any(pad) else F.avg_pool2d(x, 2)
            y = F.avg_pool2d(F.pad(y, pad), 2) if any(pad) else F.avg_pool2d(y, 2)
        else:
            factors.append(ssim_val.clamp_min(0))
    stacked = torch.stack(factors)  # (scales, B, C)
    score = (stacked ** weights.view(-1, 1, 1)).prod(0)
    return score.mean(-1).clamp(0, 1)
