"""Semantic codebook, vector quantization and discrete sampling estimators.

Index grids are float tensors of shape (..., M, K) whose rows are one-hot.
Feature grids are float tensors of shape (..., M, N).
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError, InputError, ShapeError


class Codebook(nn.Module):
    """K learnable codewords of dimension N."""

    def __init__(self, size: int, dim: int, vectors: torch.Tensor | None = None):
        super().__init__()
        if size < 2 or dim < 1:
            raise ConfigurationError(f"codebook needs K >= 2 and N >= 1, got K={size}, N={dim}")
        if vectors is None:
            vectors = torch.empty(size, dim).uniform_(-1.0 / size, 1.0 / size)
        vectors = torch.as_tensor(vectors, dtype=torch.get_default_dtype())
        if vectors.shape != (size, dim):
            raise ShapeError(f"codebook vectors must be {size}x{dim}, got {tuple(vectors.shape)}")
        _check_codewords(vectors)
        self.vectors = nn.Parameter(vectors.clone())

    @property
    def size(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @torch.no_grad()
    def init_from_features(self, features: torch.Tensor, seed: int = 0) -> None:
        """Reset the codewords to K distinct feature vectors drawn at random from ``features``."""
        flat = features.detach().reshape(-1, features.shape[-1])
        if flat.shape[-1] != self.dim:
            raise ShapeError(f"features have width {flat.shape[-1]}, codebook has N={self.dim}")
        unique = torch.unique(flat, dim=0)
        if unique.shape[0] < self.size:
            raise InputError(f"need at least {self.size} distinct feature vectors, got {unique.shape[0]}")
        gen = torch.Generator().manual_seed(seed)
        pick = torch.randperm(unique.shape[0], generator=gen)[: self.size]
        self.vectors.copy_(unique[pick].to(self.vectors.dtype))

    @torch.no_grad()
    def permute_(self, order: torch.Tensor) -> None:
        """Relabel codewords in place: new index i holds old codeword ``order[i]``."""
        order = torch.as_tensor(order, dtype=torch.long)
        if sorted(order.tolist()) != list(range(self.size)):
            raise InputError(f"order must be a permutation of 0..{self.size - 1}")
        self.vectors.copy_(self.vectors[order].clone())


def symbol_confusion(points: torch.Tensor, snr_db: float) -> np.ndarray:
    """Pairwise error probabilities Q(d_ij / sqrt(2 N0)) between unit-power symbols, zero diagonal."""
    pts = points.detach().to(torch.complex128).numpy()
    dist = np.abs(pts[:, None] - pts[None, :])
    n0 = 10.0 ** (-snr_db / 10.0)
    conf = 0.5 * np.vectorize(math.erfc)(dist / (2.0 * math.sqrt(n0)))
    np.fill_diagonal(conf, 0.0)
    return conf


def assignment_cost(order: np.ndarray, usage: np.ndarray, confusion: np.ndarray, distances: np.ndarray) -> float:
    """Expected squared codeword error when label i carries codeword ``order[i]``."""
    return float((usage[order][:, None] * confusion * distances[np.ix_(order, order)]).sum())


def channel_aware_order(vectors: torch.Tensor, usage: torch.Tensor, points: torch.Tensor, snr_db: float,
                        restarts: int = 8, seed: int = 0) -> torch.Tensor:
    """Codeword-to-symbol labelling that puts similar codewords on easily confused symbols.

    Pairwise-swap local search from the identity plus ``restarts`` random
    starts; the identity is returned unless something strictly better is found.
    """
    k = vectors.shape[0]
    if usage.shape != (k,) or points.shape != (k,):
        raise ShapeError(f"usage and points must have length K={k}")
    vec = vectors.detach().double().numpy()
    distances = ((vec[:, None] - vec[None, :]) ** 2).sum(-1)
    p = usage.detach().double().numpy()
    p = p / max(p.sum(), 1e-300)
    confusion = symbol_confusion(points, snr_db)
    rng = np.random.default_rng(seed)
    best = np.arange(k)
    best_cost = assignment_cost(best, p, confusion, distances)
    for start in [np.arange(k)] + [rng.permutation(k) for _ in range(restarts)]:
        order, cost = start.copy(), assignment_cost(start, p, confusion, distances)
        improved = True
        while improved:
            improved = False
            for i in range(k - 1):
                for j in range(i + 1, k):
                    order[[i, j]] = order[[j, i]]
                    trial = assignment_cost(order, p, confusion, distances)
                    if trial < cost - 1e-12:
                        cost, improved = trial, True
                    else:
                        order[[i, j]] = order[[j, i]]
        if cost < best_cost - 1e-12:
            best, best_cost = order.copy(), cost
    return torch.as_tensor(best, dtype=torch.long)


class CommonOrthogonalCodebook(Codebook):
    """Codebook whose columns split into a user-1 segment [0, P1) and a user-2 segment."""

    def __init__(self, size: int, dim: int, split_point: int, vectors: torch.Tensor | None = None):
        if not 1 <= split_point < dim:
            raise ConfigurationError(f"split_point must satisfy 1 <= P1 < {dim}, got {split_point}")
        super().__init__(size, dim, vectors)
        self.split_point = split_point

    def segment(self, user: int) -> slice:
        if user == 1:
            return slice(0, self.split_point)
        if user == 2:
            return slice(self.split_point, self.dim)
        raise InputError(f"user must be 1 or 2, got {user}")


def _check_codewords(vectors: torch.Tensor) -> None:
    if not torch.isfinite(vectors).all():
        raise InputError("codebook entries must be finite")
    if bool((vectors == vectors[:1]).all()):
        raise ConfigurationError("degenerate codebook: all codewords are identical")


def _vectors(codebook) -> torch.Tensor:
    return codebook.vectors if isinstance(codebook, Codebook) else torch.as_tensor(codebook)


def squared_distances(features: torch.Tensor, vectors: torch.Tensor) -> torch.Tensor:
    """||l_m - e_k||^2 for every position and codeword, shape (..., M, K)."""
    if features.shape[-1] != vectors.shape[-1]:
        raise ShapeError(
            f"feature dimension {features.shape[-1]} does not match codebook dimension {vectors.shape[-1]}"
        )
    return (
        features.square().sum(-1, keepdim=True)
        - 2 * features @ vectors.t()
        + vectors.square().sum(-1)
    )


def vq_assign(features: torch.Tensor, codebook) -> torch.Tensor:
    """One-hot grid of nearest codewords. Ties go to the lowest index."""
    dist = squared_distances(features, _vectors(codebook))
    # torch.argmin returns the first minimum
    return F.one_hot(dist.argmin(-1), dist.shape[-1]).to(features.dtype)


def dequantize(indices: torch.Tensor, codebook) -> torch.Tensor:
    """Codeword lookup as a matrix product, so soft rows and gradients pass through."""
    vectors = _vectors(codebook)
    if indices.shape[-1] != vectors.shape[0]:
        raise ShapeError(f"index grid has K={indices.shape[-1]}, codebook has K={vectors.shape[0]}")
    return indices.to(vectors.dtype) @ vectors


def is_onehot(indices: torch.Tensor) -> bool:
    binary = ((indices == 0) | (indices == 1)).all()
    return bool(binary and (indices.sum(-1) == 1).all())


def _softmax_vjp(probs: torch.Tensor, grad: torch.Tensor) -> torch.Tensor:
    return probs * grad - probs * (probs * grad).sum(-1, keepdim=True)


def reinmax_backward(probs: torch.Tensor, sample: torch.Tensor, grad: torch.Tensor) -> torch.Tensor:
    """ReinMax surrogate gradient w.r.t. logits for a fixed one-hot ``sample``.

    ``grad`` is dL/dD evaluated at the sample. The estimator combines the
    softmax Jacobian at the midpoint (pi + D)/2 with weight 2 and at pi with
    weight -1/2.
    """
    mid = 0.5 * (probs + sample)
    out = 2 * _softmax_vjp(mid, grad) - 0.5 * _softmax_vjp(probs, grad)
    return out - out.mean(-1, keepdim=True)


def straight_through_backward(probs: torch.Tensor, grad: torch.Tensor) -> torch.Tensor:
    """Plain straight-through surrogate: softmax Jacobian at pi applied to dL/dD."""
    return _softmax_vjp(probs, grad)


class _ReinMax(torch.autograd.Function):
    """One-hot categorical sample with the ReinMax (Heun) backward pass."""

    @staticmethod
    def forward(ctx, logits, generator):
        probs = logits.softmax(-1)
        flat = probs.reshape(-1, probs.shape[-1])
        choice = torch.multinomial(flat, 1, generator=generator)
        sample = torch.zeros_like(flat).scatter_(-1, choice, 1.0).reshape(probs.shape)
        ctx.save_for_backward(sample, probs)
        return sample

    @staticmethod
    def backward(ctx, grad):
        sample, probs = ctx.saved_tensors
        return reinmax_backward(probs, sample, grad), None


def _sample_onehot(logits: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    flat = logits.detach().softmax(-1).reshape(-1, logits.shape[-1])
    choice = torch.multinomial(flat, 1, generator=generator)
    return torch.zeros_like(flat).scatter_(-1, choice, 1.0).reshape(logits.shape)


def differentiable_onehot(
    scores: torch.Tensor,
    temperature: float = 1.0,
    seed: int | torch.Generator | None = None,
    method: str = "reinmax",
) -> torch.Tensor:
    """Sample one-hot rows from softmax(scores / temperature) with a gradient surrogate.

    ``method`` selects the backward pass: ``"reinmax"`` (second order) or
    ``"st"`` (straight-through through the softmax). ``"soft"`` returns the
    softmax itself, with no sampling; it is the deterministic relaxation used
    for finite-difference checks.
    """
    if not temperature > 0:
        raise ConfigurationError(f"temperature must be > 0, got {temperature}")
    if not torch.isfinite(scores).all():
        raise InputError("scores must be finite")
    logits = scores / temperature
    if method == "soft":
        return logits.softmax(-1)
    if isinstance(seed, torch.Generator):
        gen = seed
    else:
        gen = torch.Generator().manual_seed(
            int(seed) if seed is not None else int(torch.randint(2**62, (1,))))
    if method == "reinmax":
        return _ReinMax.apply(logits, gen)
    if method == "st":
        probs = logits.softmax(-1)
        return _sample_onehot(logits, gen) - probs.detach() + probs
    raise ConfigurationError(f"unknown estimator {method!r}")


def quantization_loss(features: torch.Tensor, quantized: torch.Tensor, beta_q: float = 0.25) -> torch.Tensor:
    """Codebook term ||sg[L] - L_vq||^2 plus commitment term beta_q·||L - sg[L_vq]||^2.

    Squared norms are summed over each sample and averaged over the leading
    batch axis (a 2-D input counts as a single sample).
    """
    if features.shape != quantized.shape:
        raise ShapeError(f"shape mismatch {tuple(features.shape)} vs {tuple(quantized.shape)}")
    if beta_q < 0:
        raise ConfigurationError("beta_q must be >= 0")
    codebook_term = (features.detach() - quantized).square()
    commit_term = (features - quantized.detach()).square()
    per_elem = codebook_term + beta_q * commit_term
    if per_elem.ndim <= 2:
        return per_elem.sum()
    return per_elem.flatten(1).sum(1).mean()


def split_codebook(common: CommonOrthogonalCodebook) -> tuple[torch.Tensor, torch.Tensor]:
    """Column segments (K×P1, K×P2) of the common orthogonal codebook."""
    p1 = common.split_point
    if not 1 <= p1 < common.dim:
        raise ConfigurationError(f"split_point {p1} out of range for width {common.dim}")
    return common.vectors[:, :p1], common.vectors[:, p1:]
