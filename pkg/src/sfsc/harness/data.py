"""Image datasets: seeded synthetic scenes or a folder of raster images."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ConfigurationError

log = logging.getLogger(__name__)

SYNTHETIC = "synthetic"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp", ".ppm"}


@dataclass
class DatasetSplits:
    train: torch.Tensor
    val: torch.Tensor
    test: torch.Tensor
    train_ids: list[int]
    val_ids: list[int]
    test_ids: list[int]


def synthetic_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """A smooth colour gradient with a few random rectangles and discs, (3, S, S) in [0, 1]."""
    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    c0, c1, c2 = rng.uniform(0, 1, size=(3, 3, 1, 1))
    img = c0 * (1 - xx) + c1 * xx
    img = img * (1 - 0.5 * yy) + 0.5 * c2 * yy
    for _ in range(rng.integers(2, 6)):
        colour = rng.uniform(0, 1, size=(3, 1, 1))
        cx, cy = rng.uniform(0, 1, size=2)
        r = rng.uniform(0.08, 0.3)
        if rng.random() < 0.5:
            mask = (np.abs(xx - cx) < r) & (np.abs(yy - cy) < r * rng.uniform(0.4, 1.0))
        else:
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < r ** 2
        img = np.where(mask[None], colour, img)
    return np.clip(img, 0, 1).astype(np.float32)


def synthetic_images(count: int, size: int, seed: int) -> torch.Tensor:
    rng = np.random.default_rng(seed)
    return torch.from_numpy(np.stack([synthetic_image(rng, size) for _ in range(count)]))


def load_folder(path: Path, size: int) -> torch.Tensor:
    """Read every decodable image under ``path`` (sorted), resized to size x size."""
    from PIL import Image

    files = sorted(p for p in Path(path).rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)
    images, skipped = [], 0
    for file in files:
        try:
            with Image.open(file) as im:
                arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
        except (OSError, ValueError):
            skipped += 1
            continue
        t = torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)
        t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False, antialias=True)
        images.append(t.clamp(0, 1)[0])
    if skipped:
        log.warning("skipped %d unreadable image file(s) under %s", skipped, path)
    if not images:
        raise FileNotFoundError(f"no readable images found under {path}")
    return torch.stack(images)


def ingest_dataset(path: str | Path, image_size: int, split_ratios=(0.8, 0.1, 0.1),
                   seed: int = 0, synthetic_count: int = 1000) -> DatasetSplits:
    """Load images and split them into train/val/test deterministically by ``seed``."""
    ratios = np.asarray(split_ratios, dtype=float)
    if ratios.shape != (3,) or (ratios < 0).any() or not np.isclose(ratios.sum(), 1.0):
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, got {split_ratios}")
    if str(path) == SYNTHETIC:
        images = synthetic_images(synthetic_count, image_size, seed)
    else:
        if not Path(path).exists():
            raise FileNotFoundError(f"dataset path {path} does not exist")
        images = load_folder(Path(path), image_size)
    n = images.shape[0]
    order = np.random.default_rng(seed + 1).permutation(n)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    ids = [order[:n_train].tolist(), order[n_train:n_train + n_val].tolist(),
           order[n_train + n_val:].tolist()]
    return DatasetSplits(images[ids[0]], images[ids[1]], images[ids[2]], *ids)


def user_halves(images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor, list[int], list[int]]:
    """Disjoint halves of a split for the two CS-MDMA users."""
    half = images.shape[0] // 2
    ids1, ids2 = list(range(half)), list(range(half, 2 * half))
    return images[ids1], images[ids2], ids1, ids2
