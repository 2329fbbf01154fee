"""End-to-end dual-hop semantic forwarding system.

One pass runs: encode -> quantize + CSG -> uplink -> semantic forwarding ->
CSG -> downlink -> index restoration -> dequantize + decode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch
import torch.nn as nn

from . import channel as ch
from .codebook import Codebook, dequantize, differentiable_onehot, squared_distances, vq_assign
from .losses import LossBreakdown, LossWeights, composite_loss, quantization_loss, recon_loss, trans_loss
from .semnet import (NetworkConfig, RelayNet, SemanticDecoder, SemanticEncoder, constellation_points,
                     modulate, to_iq)

STAGES = ("encode", "quantize_csg", "uplink", "forward", "csg", "downlink", "restore",
          "dequantize_decode")


def step_seeds(seed: int, step: int, count: int = 8) -> list[int]:
    """Independent integer seeds for the random draws of one training/eval step."""
    return [int(s) for s in np.random.SeedSequence([seed, step]).generate_state(count)]


@dataclass
class HopSpec:
    """Channel config and seeds for one hop of one pass."""

    config: ch.ChannelConfig
    fade_seed: int
    noise_seed: int
    ideal: bool = False

    def transmit(self, frame: torch.Tensor, equalize: bool = False) -> torch.Tensor:
        if self.ideal:
            return frame
        real = ch.sample_realization(self.config, self.fade_seed, frame.shape[:-1], frame.dtype)
        out = ch.apply_channel(frame, real, self.noise_seed)
        return ch.equalize(out, real) if equalize else out


@dataclass
class PassResult:
    features: torch.Tensor
    quantized: torch.Tensor
    indices: torch.Tensor
    tx_frame: torch.Tensor
    forward_logits: torch.Tensor
    relay_indices: torch.Tensor
    relay_frame: torch.Tensor
    restore_logits: torch.Tensor
    restored_indices: torch.Tensor
    recovered: torch.Tensor
    reconstruction: torch.Tensor
    trace: list[str] = field(default_factory=list)


def discretize(scores: torch.Tensor, training: bool, method: str, temperature: float,
               seed: int) -> torch.Tensor:
    """Hard argmax in evaluation, differentiable sample (or relaxation) in training."""
    if not training:
        return torch.nn.functional.one_hot(scores.argmax(-1), scores.shape[-1]).to(scores.dtype)
    return differentiable_onehot(scores, temperature, seed, method)


class SFSCSystem(nn.Module):
    """Transmitter, semantic forwarder, index restorer and decoder with a shared codebook."""

    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = SemanticEncoder(cfg)
        self.codebook = Codebook(cfg.codebook_size, cfg.feature_dim)
        self.forwarder = RelayNet(cfg.relay_width, cfg.codebook_size, cfg.film_blocks)
        self.restorer = RelayNet(cfg.relay_width, cfg.codebook_size, cfg.film_blocks)
        self.decoder = SemanticDecoder(cfg)
        self.register_buffer("points", constellation_points(cfg.codebook_size, cfg.constellation),
                             persistent=False)

    def vq_scores(self, features: torch.Tensor) -> torch.Tensor:
        return -squared_distances(features, self.codebook.vectors)

    def forward(
        self,
        images: torch.Tensor,
        uplink: HopSpec,
        downlink: HopSpec,
        sample_seeds: tuple[int, int, int] = (0, 1, 2),
        method: str | None = None,
        tracer: Callable[[str], None] | None = None,
    ) -> PassResult:
        trace: list[str] = []

        def mark(stage):
            trace.append(stage)
            if tracer is not None:
                tracer(stage)

        method = method or self.cfg.estimator
        training = self.training
        side = self.cfg.latent_side

        features = self.encoder(images)
        mark("encode")
        quantized = dequantize(vq_assign(features.detach(), self.codebook), self.codebook)
        if training:
            indices = differentiable_onehot(self.vq_scores(features), self.cfg.vq_temperature,
                                            sample_seeds[0], method)
        else:
            indices = vq_assign(features, self.codebook)
        tx = modulate(indices, self.points, strict=not training)
        mark("quantize_csg")

        rx_ul = uplink.transmit(tx, self.cfg.coherent_rx)
        mark("uplink")
        fwd_logits = self.forwarder(to_iq(rx_ul, side, side), uplink.config.snr_db)
        relay_idx = discretize(fwd_logits, training, method, 1.0, sample_seeds[1])
        mark("forward")
        relay_tx = modulate(relay_idx, self.points, strict=not training)
        mark("csg")
        rx_dl = downlink.transmit(relay_tx, self.cfg.coherent_rx)
        mark("downlink")
        rst_logits = self.restorer(to_iq(rx_dl, side, side), downlink.config.snr_db)
        restored = discretize(rst_logits, training, method, 1.0, sample_seeds[2])
        mark("restore")
        recovered = dequantize(restored, self.codebook)
        recon = self.decoder(recovered)
        mark("dequantize_decode")
        return PassResult(features, quantized, indices, tx, fwd_logits, relay_idx, relay_tx,
                          rst_logits, restored, recovered, recon, trace)

    def loss(self, images: torch.Tensor, result: PassResult, weights: LossWeights) -> LossBreakdown:
        """Composite loss; the transmission term supervises both relay hops against I."""
        truth = result.indices.detach()
        truth = torch.nn.functional.one_hot(truth.argmax(-1), truth.shape[-1]).to(truth.dtype)
        rec = recon_loss(images, result.reconstruction)
        trans = (trans_loss(truth, result.forward_logits.softmax(-1))
                 + trans_loss(truth, result.restore_logits.softmax(-1)))
        quant = quantization_loss(result.features, result.quantized, weights.beta_q)
        return composite_loss(rec, trans, quant, weights)

    @torch.no_grad()
    def reconstruct(self, images: torch.Tensor, uplink: HopSpec, downlink: HopSpec) -> torch.Tensor:
        was_training = self.training
        self.eval()
        try:
            return self.forward(images, uplink, downlink).reconstruction
        finally:
            self.train(was_training)
