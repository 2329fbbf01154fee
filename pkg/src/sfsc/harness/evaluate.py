"""SNR-sweep evaluation producing CSV-ready rows."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import torch

from ..channel import ChannelConfig
from ..mdma import CSMDMASystem, rate_accounting
from ..metrics import max_scales, ms_ssim, psnr_per_image, rate
from ..system import HopSpec, SFSCSystem
from .baselines import AnalogJSCC

CSV_FIELDS = ("run_id", "mode", "ul_snr_db", "dl_snr_db", "psnr_db", "ms_ssim", "rate")


def diagonal_grid(low: float = -10.0, high: float = 10.0, step: float = 2.0) -> list[tuple[float, float]]:
    points = np.arange(low, high + step / 2, step)
    return [(float(s), float(s)) for s in points]


def full_grid(points) -> list[tuple[float, float]]:
    return [(float(u), float(d)) for u in points for d in points]


def channel_uses(model) -> int:
    if isinstance(model, SFSCSystem):
        return model.cfg.positions
    if isinstance(model, CSMDMASystem):
        return rate_accounting(model.cfg, model.mdma).per_user
    if isinstance(model, AnalogJSCC):
        return model.symbols
    raise TypeError(f"unsupported model {type(model).__name__}")


def _hop(cfg: ChannelConfig, snr: float, seed_seq: np.random.SeedSequence) -> HopSpec:
    fade, noise = (int(s) for s in seed_seq.generate_state(2))
    return HopSpec(cfg.with_snr(snr), fade, noise)


def _reconstruct(model, images, ul_cfg, dl_cfg, ul, dl, seed_seq):
    if isinstance(model, CSMDMASystem):
        half = images.shape[0] // 2
        pair = (images[:half], images[half:2 * half])
        children = seed_seq.spawn(4)
        uplinks = (_hop(ul_cfg, ul, children[0]), _hop(ul_cfg, ul, children[1]))
        enh = (_hop(dl_cfg, dl, children[2]), _hop(dl_cfg, dl, children[3]))
        common = _hop(dl_cfg, dl, seed_seq.spawn(1)[0])
        outs = model.reconstruct(pair, uplinks, common, enh)
        return torch.cat(pair), torch.cat(outs)
    a, b = seed_seq.spawn(2)
    return images, model.reconstruct(images, _hop(ul_cfg, ul, a), _hop(dl_cfg, dl, b))


def evaluate_point(model, images: torch.Tensor, ul_cfg: ChannelConfig, dl_cfg: ChannelConfig,
                   ul: float, dl: float, seed: int, batch_size: int = 50) -> tuple[float, float]:
    """Mean per-image PSNR and MS-SSIM over ``images`` at one (UL, DL) SNR point."""
    psnrs, ssims = [], []
    size = images.shape[-1]
    root = np.random.SeedSequence([seed, int(round(ul * 1000)) + 10 ** 6, int(round(dl * 1000)) + 10 ** 6])
    for i, start in enumerate(range(0, images.shape[0], batch_size)):
        batch = images[start:start + batch_size]
        orig, recon = _reconstruct(model, batch, ul_cfg, dl_cfg, ul, dl, np.random.SeedSequence(
            root.generate_state(1)[0] + i))
        if orig.shape[0] == 0:
            continue
        psnrs.append(psnr_per_image(orig, recon))
        ssims.append(ms_ssim(orig, recon, scales=max_scales(size, size)))
    p = torch.cat(psnrs)
    return float(p[torch.isfinite(p)].mean()), float(torch.cat(ssims).mean())


def evaluate_sweep(model, images: torch.Tensor, pairs, ul_cfg: ChannelConfig, dl_cfg: ChannelConfig,
                   run_id: str, mode: str, seed: int = 12345, batch_size: int = 50,
                   workers: int = 1) -> list[dict]:
    """One CSV row per (UL, DL) pair; deterministic for a given ``seed``."""
    model.eval()
    r = rate(channel_uses(model), (images.shape[-2], images.shape[-1]))
    pairs = [(float(u), float(d)) for u, d in pairs]

    def run(pair):
        ul, dl = pair
        p, s = evaluate_point(model, images, ul_cfg, dl_cfg, ul, dl, seed, batch_size)
        return {"run_id": run_id, "mode": mode, "ul_snr_db": ul, "dl_snr_db": dl,
                "psnr_db": p, "ms_ssim": s, "rate": r}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(run, pairs))
    return [run(p) for p in pairs]
