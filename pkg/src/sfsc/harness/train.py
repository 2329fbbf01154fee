"""Training loops for SFSC, CS-MDMA and the analog baselines."""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from ..codebook import channel_aware_order, dequantize, differentiable_onehot, quantization_loss, vq_assign
from ..errors import TrainingError
from ..losses import recon_loss
from ..mdma import CSMDMASystem
from ..system import HopSpec, SFSCSystem, step_seeds
from .baselines import AnalogJSCC
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import DatasetSplits, ingest_dataset, user_halves

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: nn.Module
    log: list[dict]
    optimizer: torch.optim.Optimizer
    checkpoint_path: object = None
    step_losses: list[float] = field(default_factory=list)
    initial_loss: float = math.nan

    def final_smoothed(self, window: int = 5, key: str = "total") -> float:
        values = [row[key] for row in self.log if row["stage"] == "train"]
        return float(np.mean(values[-window:]))


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2 ** 32)


def load_data(cfg: RunConfig) -> DatasetSplits:
    return ingest_dataset(cfg.dataset_path, cfg.network.image_size, cfg.split_ratios, cfg.seed,
                          cfg.synthetic_count)


def batches(n: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng([seed, epoch]).permutation(n)
    for start in range(0, n, batch_size):
        yield torch.from_numpy(order[start:start + batch_size])


def hops(cfg: RunConfig, seeds: list[int], ideal_uplink: bool = False) -> tuple[HopSpec, HopSpec]:
    ul_snr, dl_snr = cfg.train_snr_policy.draw(np.random.default_rng(seeds[7]), cfg.channel_ul, cfg.channel_dl)
    return (HopSpec(cfg.channel_ul.with_snr(ul_snr), seeds[0], seeds[1], ideal_uplink),
            HopSpec(cfg.channel_dl.with_snr(dl_snr), seeds[2], seeds[3]))


def _fit(model: nn.Module, params, n_train: int, cfg: RunConfig, epochs: int, stage: str,
         step_fn: Callable[[torch.Tensor, list[int]], dict[str, torch.Tensor]],
         seed_offset: int = 0, optimizer: torch.optim.Optimizer | None = None, lr: float | None = None,
         epoch_hook: Callable[[int, dict], None] | None = None) -> tuple[list[dict], list[float], torch.optim.Optimizer]:
    """Run ``epochs`` full passes; ``step_fn`` returns named losses including ``total``."""
    opt = optimizer or torch.optim.Adam(params, lr=lr or cfg.learning_rate)
    steps_per_epoch = math.ceil(n_train / cfg.batch_size)
    sched = (torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(1, epochs * steps_per_epoch))
             if cfg.cosine_decay else None)
    rows, step_losses = [], []
    step = seed_offset
    model.train()
    for epoch in range(epochs):
        sums: dict[str, float] = {}
        count = 0
        for idx in batches(n_train, cfg.batch_size, cfg.seed + seed_offset, epoch):
            seeds = step_seeds(cfg.seed, step)
            losses = step_fn(idx, seeds)
            total = losses["total"]
            if not torch.isfinite(total):
                raise TrainingError(f"non-finite loss in {stage} at step {step}", step=step)
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            if sched is not None:
                sched.step()
            for key, value in losses.items():
                sums[key] = sums.get(key, 0.0) + float(value.detach())
            step_losses.append(float(total.detach()))
            count += 1
            step += 1
        row = {"stage": stage, "epoch": epoch, **{k: v / count for k, v in sums.items()}}
        rows.append(row)
        log.info("%s epoch %d: %s", stage, epoch, {k: round(v, 5) for k, v in row.items() if k not in ("stage", "epoch")})
        if epoch_hook is not None:
            epoch_hook(epoch, row)
    return rows, step_losses, opt


def pretrain_autoencoder(model, images: torch.Tensor, cfg: RunConfig, epochs: int) -> list[dict]:
    """Channel-free VQ autoencoder warm-up of encoder, codebook and decoder.

    Uses the same sampling estimator and temperature as end-to-end training;
    only the reconstruction and quantization terms are active. The codebook is
    first seeded with encoder outputs so every codeword starts in use.
    """
    net = model.cfg
    first = next(batches(images.shape[0], cfg.batch_size, cfg.seed + 10 ** 7, 0))
    with torch.no_grad():
        model.codebook.init_from_features(model.encoder(images[first]), cfg.seed)
    params = [*model.encoder.parameters(), *model.codebook.parameters(), *model.decoder.parameters()]

    def step(idx, seeds):
        x = images[idx]
        feats = model.encoder(x)
        quant = dequantize(vq_assign(feats.detach(), model.codebook), model.codebook)
        onehot = differentiable_onehot(model.vq_scores(feats), net.vq_temperature, seeds[4], net.estimator)
        rec = recon_loss(x, model.decoder(dequantize(onehot, model.codebook)))
        q = quantization_loss(feats, quant, cfg.weights.beta_q)
        return {"total": rec + cfg.weights.lambda_quant * q, "rec": rec, "quant": q}

    rows, _, _ = _fit(model, params, images.shape[0], cfg, epochs, "pretrain", step, seed_offset=10 ** 7,
                      lr=cfg.pretrain_learning_rate)
    return rows


def assign_indices(model, images: torch.Tensor, cfg: RunConfig) -> torch.Tensor:
    """Relabel the codebook for the training SNR; returns the applied order."""
    counts = torch.zeros(model.codebook.size, dtype=torch.float64)
    with torch.no_grad():
        for start in range(0, images.shape[0], 64):
            hard = vq_assign(model.encoder(images[start:start + 64]), model.codebook)
            counts += hard.reshape(-1, hard.shape[-1]).sum(0).double()
    policy = cfg.train_snr_policy
    snr = (policy.low + policy.high) / 2 if policy.kind == "uniform" else \
        (cfg.channel_ul.snr_db + cfg.channel_dl.snr_db) / 2
    order = channel_aware_order(model.codebook.vectors, counts, model.points, snr, seed=cfg.seed)
    model.codebook.permute_(order)
    log.info("index assignment at %.1f dB: %s", snr, order.tolist())
    return order


def warm_up_relays(model: SFSCSystem, images: torch.Tensor, cfg: RunConfig, epochs: int) -> list[dict]:
    """Train only the forwarder and restorer on the transmission loss, everything else frozen."""
    relay_params = [*model.forwarder.parameters(), *model.restorer.parameters()]
    relay_ids = {id(p) for p in relay_params}
    frozen = [p for p in model.parameters() if id(p) not in relay_ids and p.requires_grad]
    for p in frozen:
        p.requires_grad_(False)

    def step(idx, seeds):
        x = images[idx]
        ul, dl = hops(cfg, seeds)
        result = model(x, ul, dl, tuple(seeds[4:7]))
        trans = model.loss(x, result, cfg.weights).trans
        return {"total": trans, "trans": trans}

    try:
        rows, _, _ = _fit(model, relay_params, images.shape[0], cfg, epochs, "relay_warmup", step,
                          seed_offset=2 * 10 ** 7, lr=cfg.relay_warmup_learning_rate)
    finally:
        for p in frozen:
            p.requires_grad_(True)
    return rows


def _initial_loss(model: nn.Module, n_train: int, cfg: RunConfig, step_fn) -> float:
    """Composite loss of the model as it stands, on the first batch the main stage will see."""
    idx = next(batches(n_train, cfg.batch_size, cfg.seed, 0))
    with torch.no_grad():
        return float(step_fn(idx, step_seeds(cfg.seed, 0), False)["total"])


def _warm_start(model: nn.Module, cfg: RunConfig) -> None:
    if cfg.warm_start:
        ckpt = load_checkpoint(cfg.warm_start, expect_network=cfg.network.to_dict())
        if isinstance(model, CSMDMASystem) and ckpt.config.get("mode") == "sfsc":
            model.load_sfsc(ckpt.model_state)
        else:
            model.load_state_dict(ckpt.model_state)


@contextmanager
def _finetune_scope(model: nn.Module, cfg: RunConfig):
    """Yield the parameters the end-to-end stage updates; frozen ones are restored on exit."""
    frozen = [] if cfg.finetune == "all" else [*model.encoder.parameters(), *model.codebook.parameters()]
    for p in frozen:
        p.requires_grad_(False)
    try:
        yield [p for p in model.parameters() if p.requires_grad]
    finally:
        for p in frozen:
            p.requires_grad_(True)


def _finish(model, opt, rows, cfg: RunConfig, epochs: int, save: bool):
    path = None
    if save:
        path = save_checkpoint(Checkpoint(model.state_dict(), cfg.to_dict(), epochs, opt.state_dict(), rows),
                               cfg.output_dir / "checkpoint.pt")
    return path


def train_sfsc(cfg: RunConfig, data: DatasetSplits | None = None, save: bool = True,
               tracer: Callable[[str], None] | None = None) -> TrainResult:
    """Optional VQ pretraining and relay warm-up, then end-to-end training through both hops."""
    data = data or load_data(cfg)
    if data.train.shape[0] == 0:
        raise FileNotFoundError("training split is empty")
    set_determinism(cfg.seed)
    model = SFSCSystem(cfg.network)
    _warm_start(model, cfg)
    train = data.train

    def step(idx, seeds, trace=True):
        x = train[idx]
        ul, dl = hops(cfg, seeds)
        result = model(x, ul, dl, tuple(seeds[4:7]), tracer=tracer if trace else None)
        b = model.loss(x, result, cfg.weights)
        return {"total": b.total, "rec": b.rec, "trans": b.trans, "quant": b.quant}

    initial = _initial_loss(model, train.shape[0], cfg, step)
    rows = pretrain_autoencoder(model, data.train, cfg, cfg.pretrain_epochs) if cfg.pretrain_epochs else []
    if cfg.index_assignment:
        assign_indices(model, data.train, cfg)
    if cfg.relay_warmup_epochs:
        rows += warm_up_relays(model, data.train, cfg, cfg.relay_warmup_epochs)
    with _finetune_scope(model, cfg) as params:
        train_rows, step_losses, opt = _fit(model, params, train.shape[0], cfg, cfg.epochs, "train", step)
    rows += train_rows
    path = _finish(model, opt, rows, cfg, cfg.epochs, save)
    return TrainResult(model, rows, opt, path, step_losses, initial)


def train_csmdma(cfg: RunConfig, data: DatasetSplits | None = None, save: bool = True) -> TrainResult:
    """Two-user training on disjoint halves of the training split.

    ``pretrain_epochs`` first runs channel-free passes (receivers get the sent
    indices), giving the combiner and enhancement blocks a short gradient path.
    """
    data = data or load_data(cfg)
    users = user_halves(data.train)
    if users[0].shape[0] == 0:
        raise FileNotFoundError("training split too small for two users")
    set_determinism(cfg.seed)
    model = CSMDMASystem(cfg.network, cfg.mdma)
    _warm_start(model, cfg)
    n = users[0].shape[0]
    first = next(batches(n, cfg.batch_size, cfg.seed + 3 * 10 ** 7, 0))
    if not cfg.warm_start:
        model.codebook.init_from_features(model.encoder(users[0][first]).detach(), cfg.seed)
    model.init_codebooks((users[0][first], users[1][first]), cfg.seed)

    def step(idx, seeds, trace=True, channel_free=False):
        images = (users[0][idx], users[1][idx])
        ul1, dl_c = hops(cfg, seeds, cfg.mdma.ideal_uplink)
        ul2 = HopSpec(ul1.config, seeds[0] + 1, seeds[1] + 1, cfg.mdma.ideal_uplink)
        enh = (HopSpec(dl_c.config, seeds[2] + 1, seeds[3] + 1), HopSpec(dl_c.config, seeds[2] + 2, seeds[3] + 2))
        result = model(images, (ul1, ul2), dl_c, enh, tuple(seeds[:8]), channel_free=channel_free)
        b = model.loss(images, result, cfg.weights)
        return {"total": b.total, "user1": b.per_user[0], "user2": b.per_user[1], "rec1": b.rec[0], "rec2": b.rec[1]}

    initial = _initial_loss(model, n, cfg, step)
    rows = []
    with _finetune_scope(model, cfg) as params:
        if cfg.pretrain_epochs:
            rows, _, _ = _fit(model, params, n, cfg, cfg.pretrain_epochs, "pretrain",
                              lambda idx, seeds: step(idx, seeds, channel_free=True), seed_offset=10 ** 7,
                              lr=cfg.pretrain_learning_rate)
        train_rows, step_losses, opt = _fit(model, params, n, cfg, cfg.epochs, "train", step)
    rows += train_rows
    path = _finish(model, opt, rows, cfg, cfg.epochs, save)
    return TrainResult(model, rows, opt, path, step_losses, initial)


def train_baseline(cfg: RunConfig, data: DatasetSplits | None = None, save: bool = True) -> TrainResult:
    data = data or load_data(cfg)
    set_determinism(cfg.seed)
    model = AnalogJSCC(cfg.analog, cfg.network.image_size, "tm" if cfg.mode == "tm_deepjscc" else "rm",
                      cfg.network.coherent_rx)
    train = data.train

    def step(idx, seeds, trace=True):
        x = train[idx]
        ul, dl = hops(cfg, seeds)
        rec = recon_loss(x, model(x, ul, dl))
        return {"total": rec, "rec": rec}

    initial = _initial_loss(model, train.shape[0], cfg, step)
    rows, step_losses, opt = _fit(model, model.parameters(), train.shape[0], cfg, cfg.epochs, "train", step)
    path = _finish(model, opt, rows, cfg, cfg.epochs, save)
    return TrainResult(model, rows, opt, path, step_losses, initial)
