"""Codebook-split multiple access (CS-MDMA) for two users sharing one downlink.

The relay recovers each user's features, fuses them with a learned combiner and
quantizes the result against a common orthogonal codebook whose columns are
partitioned between the users. One common frame carries both users; each user
also receives a lower-rate enhancement stream that encodes what the split lost.

Residual convention: a user's split segment (P_u columns) is zero-padded back
into the full N-dimensional feature space at that user's own column range
before the residual L_u - pad(split_u) is formed.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .codebook import (Codebook, CommonOrthogonalCodebook, dequantize, differentiable_onehot,
                       squared_distances, vq_assign)
from .errors import CapabilityError, ConfigurationError, InputError, ShapeError
from .losses import LossWeights, quantization_loss, recon_loss, trans_loss
from .semnet import (NetworkConfig, RelayNet, ResBlock, SemanticDecoder, SemanticEncoder,
                     constellation_points, grid_to_map, map_to_grid, modulate, to_iq)
from .system import HopSpec, discretize

USERS = (1, 2)
log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MdmaConfig:
    split_point: int | None = None
    enhancement: bool = True
    enhancement_stride: int = 2
    ideal_uplink: bool = False
    combiner_width: int | None = None

    def resolve_split(self, feature_dim: int) -> int:
        p1 = feature_dim // 2 if self.split_point is None else self.split_point
        if not 1 <= p1 < feature_dim:
            raise ConfigurationError(f"split point must satisfy 1 <= P1 < N={feature_dim}, got {p1}")
        return p1

    def validate(self, cfg: NetworkConfig) -> None:
        self.resolve_split(cfg.feature_dim)
        if self.enhancement_stride < 1 or cfg.latent_side % self.enhancement_stride:
            raise ConfigurationError(
                f"enhancement_stride {self.enhancement_stride} must divide the latent side {cfg.latent_side}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class RateAccount:
    """Downlink channel uses (complex symbols) per image."""

    common_total: int
    common_per_user: int
    enhancement_per_user: int

    @property
    def per_user(self) -> int:
        return self.common_per_user + self.enhancement_per_user


def rate_accounting(cfg: NetworkConfig, mdma: MdmaConfig) -> RateAccount:
    mdma.validate(cfg)
    m = cfg.positions
    if m % len(USERS):
        raise ConfigurationError("the common frame length must split evenly between the users")
    enhancement = m // mdma.enhancement_stride if mdma.enhancement else 0
    return RateAccount(m, m // len(USERS), enhancement)


# --------------------------------------------------------------------------
# stateless pieces


def _check_grid(x: torch.Tensor, name: str) -> None:
    if x.ndim != 3:
        raise ShapeError(f"{name} must be a (B, M, C) grid, got {tuple(x.shape)}")


def superpose_encode(combined: torch.Tensor, common: CommonOrthogonalCodebook,
                     points: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Hard VQ against the common codebook and one modulated frame for both users."""
    if combined.shape[-1] != common.dim:
        raise ShapeError(f"combined width {combined.shape[-1]} != common codebook width {common.dim}")
    indices = vq_assign(combined, common)
    return indices, modulate(indices, points, strict=True)


def split_semantics(indices: torch.Tensor, common: CommonOrthogonalCodebook, user: int) -> torch.Tensor:
    """Dequantize through one user's column segment of the common codebook."""
    if user not in USERS:
        raise InputError(f"user must be 1 or 2, got {user}")
    return dequantize(indices, common.vectors[:, common.segment(user)])


def pad_split(split: torch.Tensor, common: CommonOrthogonalCodebook, user: int) -> torch.Tensor:
    """Embed a P_u-wide segment into N columns, zeros outside the user's range."""
    seg = common.segment(user)
    if split.shape[-1] != seg.stop - seg.start:
        raise ShapeError(f"user {user} segment has width {seg.stop - seg.start}, got {split.shape[-1]}")
    return F.pad(split, (seg.start, common.dim - seg.stop))


def fuse(split: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    if split.shape != residual.shape:
        raise ShapeError(f"cannot fuse {tuple(split.shape)} with {tuple(residual.shape)}")
    return split + residual


def diagnose_superposition(decoder, original: torch.Tensor, split: torch.Tensor,
                           samples: int | None = None) -> dict[str, float]:
    """Direct superposition loss vs. its first-order (Jacobian) approximation.

    direct      = mean ||f(L) - f(L_split)||^2
    first_order = mean ||J_f(L) r||^2 = mean r^T J^T J r,  r = L - L_split

    Both are averaged over the first ``samples`` batch elements (all by default).
    """
    if not getattr(decoder, "differentiable", True):
        raise CapabilityError("superposition diagnostic needs a differentiable decoder")
    if original.shape != split.shape:
        raise ShapeError(f"original {tuple(original.shape)} and split {tuple(split.shape)} differ")
    if samples is not None:
        if samples < 1:
            raise ConfigurationError("samples must be >= 1")
        original, split = original[:samples], split[:samples]
    residual = original - split
    with torch.no_grad():
        direct = (decoder(original) - decoder(split)).square().flatten(1).sum(1).mean()
    _, jr = torch.func.jvp(decoder, (original,), (residual,))
    first_order = jr.detach().square().flatten(1).sum(1).mean()
    return {"direct": float(direct), "first_order": float(first_order)}


# --------------------------------------------------------------------------
# learned blocks


class CombinedFeatureExtractor(nn.Module):
    """f_cfe: two users' (B, M, N) grids -> one (B, M, N) grid.

    Starts as a column select (user 1's columns [0, P1), user 2's [P1, N)) and
    learns a correction on top, so a warm-started decoder sees familiar features.
    """

    def __init__(self, feature_dim: int, width: int, side: int, split_point: int):
        super().__init__()
        if not 1 <= split_point < feature_dim:
            raise ConfigurationError(f"split_point must satisfy 1 <= P1 < {feature_dim}, got {split_point}")
        self.side, self.feature_dim, self.split_point = side, feature_dim, split_point
        self.net = nn.Sequential(
            nn.Conv2d(2 * feature_dim, width, 3, 1, 1), ResBlock(width), nn.ReLU(), nn.Conv2d(width, feature_dim, 1))
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def forward(self, user1: torch.Tensor, user2: torch.Tensor) -> torch.Tensor:
        for name, x in (("user1", user1), ("user2", user2)):
            _check_grid(x, name)
        if user1.shape != user2.shape or user1.shape[-1] != self.feature_dim:
            raise ShapeError(f"combiner expects two (B, M, {self.feature_dim}) grids, "
                             f"got {tuple(user1.shape)} and {tuple(user2.shape)}")
        p1 = self.split_point
        select = torch.cat([user1[..., :p1], user2[..., p1:]], -1)
        x = torch.cat([grid_to_map(user1, self.side, self.side), grid_to_map(user2, self.side, self.side)], 1)
        return select + map_to_grid(self.net(x))


class EnhancementExtractor(nn.Module):
    """f_efe: residual (B, M, N) -> (B, M/stride, N), stride along the width axis."""

    def __init__(self, feature_dim: int, width: int, side: int, stride: int):
        super().__init__()
        self.side = side
        self.body = nn.Sequential(nn.Conv2d(feature_dim, width, 3, 1, 1), nn.ReLU())
        self.out = nn.Conv2d(width, feature_dim, (1, stride), (1, stride))

    def forward(self, residual: torch.Tensor) -> torch.Tensor:
        _check_grid(residual, "residual")
        return map_to_grid(self.out(self.body(grid_to_map(residual, self.side, self.side))))


class EnhancementRestorer(nn.Module):
    """f_efr: received enhancement grid (B, M/stride, N) -> residual estimate (B, M, N)."""

    def __init__(self, feature_dim: int, width: int, side: int, stride: int):
        super().__init__()
        self.side, self.stride, self.feature_dim = side, stride, feature_dim
        self.body = nn.Sequential(nn.ConvTranspose2d(feature_dim, width, (1, stride), (1, stride)), nn.ReLU())
        self.out = nn.Conv2d(width, feature_dim, 3, 1, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        _check_grid(features, "enhancement features")
        expected = (self.side * (self.side // self.stride), self.feature_dim)
        if features.shape[1:] != expected:
            raise ShapeError(f"enhancement grid must be (B, {expected[0]}, {expected[1]}), got {tuple(features.shape)}")
        x = grid_to_map(features, self.side, self.side // self.stride)
        return map_to_grid(self.out(self.body(x)))


# --------------------------------------------------------------------------
# full two-user system


@dataclass
class MdmaPass:
    uplink_features: list[torch.Tensor]
    uplink_quantized: list[torch.Tensor]
    uplink_indices: list[torch.Tensor]
    forward_logits: list[torch.Tensor]
    relay_features: list[torch.Tensor]
    combined: torch.Tensor
    combined_quantized: torch.Tensor
    common_indices: torch.Tensor
    common_logits: torch.Tensor | None
    enhance_features: list[torch.Tensor] = field(default_factory=list)
    enhance_quantized: list[torch.Tensor] = field(default_factory=list)
    enhance_indices: list[torch.Tensor] = field(default_factory=list)
    enhance_logits: list[torch.Tensor] = field(default_factory=list)
    recovered: list[torch.Tensor] = field(default_factory=list)
    reconstructions: list[torch.Tensor] = field(default_factory=list)


@dataclass
class MdmaLoss:
    total: torch.Tensor
    per_user: list[torch.Tensor]
    rec: list[torch.Tensor]

    def as_floats(self) -> dict[str, float]:
        out = {"total": float(self.total.detach())}
        for u, (lu, ru) in enumerate(zip(self.per_user, self.rec), start=1):
            out[f"user{u}"] = float(lu.detach())
            out[f"rec{u}"] = float(ru.detach())
        return out


class CSMDMASystem(nn.Module):
    """Two-user CS-MDMA system built around a shared SFSC uplink (encoder, codebook, forwarder)."""

    def __init__(self, cfg: NetworkConfig, mdma: MdmaConfig = MdmaConfig()):
        super().__init__()
        mdma.validate(cfg)
        self.cfg, self.mdma = cfg, mdma
        n, k, side = cfg.feature_dim, cfg.codebook_size, cfg.latent_side
        width = mdma.combiner_width or cfg.base_width
        stride = mdma.enhancement_stride
        self.encoder = SemanticEncoder(cfg)
        self.codebook = Codebook(k, n)
        self.forwarder = RelayNet(cfg.relay_width, k, cfg.film_blocks)
        self.combiner = CombinedFeatureExtractor(n, width, side, mdma.resolve_split(n))
        self.common = CommonOrthogonalCodebook(k, n, mdma.resolve_split(n))
        self.common_restorer = RelayNet(cfg.relay_width, k, cfg.film_blocks)
        self.enh_extractors = nn.ModuleList(EnhancementExtractor(n, width, side, stride) for _ in USERS)
        self.enh_codebooks = nn.ModuleList(Codebook(k, n) for _ in USERS)
        self.enh_index_restorers = nn.ModuleList(RelayNet(cfg.relay_width, k, cfg.film_blocks) for _ in USERS)
        self.enh_feature_restorers = nn.ModuleList(EnhancementRestorer(n, width, side, stride) for _ in USERS)
        self.decoder = SemanticDecoder(cfg)
        self.register_buffer("points", constellation_points(k, cfg.constellation), persistent=False)

    # thin wrappers exposing the individual relay and user-side steps
    def combine_features(self, user1: torch.Tensor, user2: torch.Tensor) -> torch.Tensor:
        return self.combiner(user1, user2)

    def extract_enhancement(self, user: int, original: torch.Tensor,
                            split: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Residual features and their hard private-codebook indices plus the frame."""
        if original.shape != split.shape:
            raise ShapeError(f"original {tuple(original.shape)} vs split {tuple(split.shape)}")
        feats = self.enh_extractors[user - 1](original - split)
        idx = vq_assign(feats, self.enh_codebooks[user - 1])
        return idx, modulate(idx, self.points, strict=True)

    def restore_enhancement(self, user: int, received: torch.Tensor) -> torch.Tensor:
        return self.enh_feature_restorers[user - 1](received)

    def load_sfsc(self, sfsc_state: dict) -> None:
        """Warm-start from an SFSC state dict.

        Encoder, codebook, forwarder and decoder are copied directly. The SFSC
        index restorer also initializes every downlink index restorer here: they
        all detect the same constellation, only the codebook behind the indices differs.
        """

        def part(name):
            return {k[len(name) + 1:]: v for k, v in sfsc_state.items() if k.startswith(name + ".")}

        for name in ("encoder", "codebook", "forwarder", "decoder"):
            getattr(self, name).load_state_dict(part(name))
        restorer = part("restorer")
        self.common_restorer.load_state_dict(restorer)
        for net in self.enh_index_restorers:
            net.load_state_dict(restorer)

    @torch.no_grad()
    def init_codebooks(self, images: tuple[torch.Tensor, torch.Tensor], seed: int = 0) -> None:
        """Seed the common and enhancement codebooks from noiseless, hard-quantized inputs."""
        def seed_from(codebook, features, offset):
            try:
                codebook.init_from_features(features, seed + offset)
            except InputError as err:
                log.warning("keeping initial codewords: %s", err)

        relay = [dequantize(vq_assign(self.encoder(x), self.codebook), self.codebook) for x in images]
        combined = self.combiner(*relay)
        seed_from(self.common, combined, 0)
        if not self.mdma.enhancement:
            return
        idx = vq_assign(combined, self.common)
        for u in USERS:
            split = pad_split(split_semantics(idx, self.common, u), self.common, u)
            seed_from(self.enh_codebooks[u - 1], self.enh_extractors[u - 1](relay[u - 1] - split), u)

    def _sample(self, scores, training, method, temperature, seed):
        return discretize(scores, training, method, temperature, seed)

    def forward(self, images: tuple[torch.Tensor, torch.Tensor], uplinks: tuple[HopSpec, HopSpec],
                common_link: HopSpec, enhance_links: tuple[HopSpec, HopSpec],
                sample_seeds: tuple[int, ...] = tuple(range(8)), method: str | None = None,
                channel_free: bool = False) -> MdmaPass:
        """One two-user pass; ``channel_free`` skips every hop and detector (receivers get the sent indices)."""
        cfg, side = self.cfg, self.cfg.latent_side
        method = method or cfg.estimator
        training = self.training
        temp = cfg.vq_temperature
        e_side = side // self.mdma.enhancement_stride

        feats, quants, idxs, fwd_logits, relay_feats = [], [], [], [], []
        for u in USERS:
            f = self.encoder(images[u - 1])
            q = dequantize(vq_assign(f.detach(), self.codebook), self.codebook)
            scores = -squared_distances(f, self.codebook.vectors)
            i = (differentiable_onehot(scores, temp, sample_seeds[u - 1], method) if training
                 else vq_assign(f, self.codebook))
            if self.mdma.ideal_uplink or channel_free:
                relay_i, logits = i, None
            else:
                rx = uplinks[u - 1].transmit(modulate(i, self.points, strict=not training), cfg.coherent_rx)
                logits = self.forwarder(to_iq(rx, side, side), uplinks[u - 1].config.snr_db)
                relay_i = self._sample(logits, training, method, 1.0, sample_seeds[2 + u - 1])
            feats.append(f)
            quants.append(q)
            idxs.append(i)
            fwd_logits.append(logits)
            relay_feats.append(dequantize(relay_i, self.codebook))

        combined = self.combiner(*relay_feats)
        comb_q = dequantize(vq_assign(combined.detach(), self.common), self.common)
        comb_scores = -squared_distances(combined, self.common.vectors)
        comb_i = (differentiable_onehot(comb_scores, temp, sample_seeds[4], method) if training
                  else vq_assign(combined, self.common))
        if channel_free:
            comb_hat, common_logits = comb_i, None
        else:
            rx_c = common_link.transmit(modulate(comb_i, self.points, strict=not training), cfg.coherent_rx)
            common_logits = self.common_restorer(to_iq(rx_c, side, side), common_link.config.snr_db)
            comb_hat = self._sample(common_logits, training, method, 1.0, sample_seeds[5])

        out = MdmaPass(feats, quants, idxs, fwd_logits, relay_feats, combined, comb_q, comb_i, common_logits)
        for u in USERS:
            # relay side: what the common stream loses for this user
            split_relay = pad_split(split_semantics(comb_i, self.common, u), self.common, u)
            split_hat = pad_split(split_semantics(comb_hat, self.common, u), self.common, u)
            if self.mdma.enhancement:
                ef = self.enh_extractors[u - 1](relay_feats[u - 1] - split_relay)
                cb = self.enh_codebooks[u - 1]
                eq = dequantize(vq_assign(ef.detach(), cb), cb)
                escores = -squared_distances(ef, cb.vectors)
                ei = (differentiable_onehot(escores, temp, sample_seeds[6] + u, method) if training
                      else vq_assign(ef, cb))
                if channel_free:
                    ehat, elogits = ei, None
                else:
                    link = enhance_links[u - 1]
                    rx_e = link.transmit(modulate(ei, self.points, strict=not training), cfg.coherent_rx)
                    elogits = self.enh_index_restorers[u - 1](to_iq(rx_e, side, e_side), link.config.snr_db)
                    ehat = self._sample(elogits, training, method, 1.0, sample_seeds[7] + u)
                residual = self.enh_feature_restorers[u - 1](dequantize(ehat, cb))
                out.enhance_features.append(ef)
                out.enhance_quantized.append(eq)
                out.enhance_indices.append(ei)
                out.enhance_logits.append(elogits)
            else:
                residual = torch.zeros_like(split_hat)
            recovered = fuse(split_hat, residual)
            out.recovered.append(recovered)
            out.reconstructions.append(self.decoder(recovered))
        return out

    def loss(self, images: tuple[torch.Tensor, torch.Tensor], result: MdmaPass,
             weights: LossWeights) -> MdmaLoss:
        """Per-user composite losses; shared common-stream terms are split evenly, so total = sum."""

        def ce(truth, logits):
            if logits is None:
                return torch.zeros((), device=truth.device)
            hard = F.one_hot(truth.detach().argmax(-1), truth.shape[-1]).to(logits.dtype)
            return trans_loss(hard, logits.softmax(-1))

        shared_trans = ce(result.common_indices, result.common_logits)
        shared_quant = quantization_loss(result.combined, result.combined_quantized, weights.beta_q)
        per_user, recs = [], []
        for u in USERS:
            rec = recon_loss(images[u - 1], result.reconstructions[u - 1])
            trans = 0.5 * shared_trans
            quant = 0.5 * shared_quant + quantization_loss(
                result.uplink_features[u - 1], result.uplink_quantized[u - 1], weights.beta_q)
            trans = trans + ce(result.uplink_indices[u - 1], result.forward_logits[u - 1])
            if result.enhance_features:
                trans = trans + ce(result.enhance_indices[u - 1], result.enhance_logits[u - 1])
                quant = quant + quantization_loss(result.enhance_features[u - 1],
                                                  result.enhance_quantized[u - 1], weights.beta_q)
            per_user.append(rec + weights.lambda_trans * trans + weights.lambda_quant * quant)
            recs.append(rec)
        return MdmaLoss(per_user[0] + per_user[1], per_user, recs)

    @torch.no_grad()
    def reconstruct(self, images, uplinks, common_link, enhance_links) -> list[torch.Tensor]:
        was_training = self.training
        self.eval()
        try:
            return self.forward(images, uplinks, common_link, enhance_links).reconstructions
        finally:
            self.train(was_training)
