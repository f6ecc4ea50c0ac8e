"""A single vector-quantizer stage: codebook, nearest-codeword lookup, EMA k-means."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .numerics import as_matrix, pairwise_sq_dist

#: Laplace constant added to EMA cluster sizes before dividing.
EMA_DELTA = 1e-12


@dataclass
class Codebook:
    """K x N table of code vectors plus the EMA k-means accumulators."""

    vectors: np.ndarray
    ema_cluster_size: np.ndarray = field(default=None)
    ema_embed_sum: np.ndarray = field(default=None)

    def __post_init__(self):
        self.vectors = np.array(as_matrix(self.vectors, "codebook vectors"), copy=True)
        K, N = self.vectors.shape
        if K < 1 or N < 1:
            raise InputError(f"codebook needs K >= 1 and N >= 1, got {K}x{N}")
        if self.ema_cluster_size is None:
            self.ema_cluster_size = np.zeros(K)
        if self.ema_embed_sum is None:
            self.ema_embed_sum = np.zeros((K, N))
        self.ema_cluster_size = np.array(self.ema_cluster_size, dtype=np.float64).ravel()
        self.ema_embed_sum = np.array(as_matrix(self.ema_embed_sum, "ema_embed_sum", cols=N))
        if self.ema_cluster_size.shape != (K,) or self.ema_embed_sum.shape != (K, N):
            raise InputError("EMA state does not match codebook shape")
        if np.any(self.ema_cluster_size < 0):
            raise InputError("ema_cluster_size must be nonnegative")

    @classmethod
    def zeros(cls, K: int, N: int) -> "Codebook":
        return cls(np.zeros((K, N)))

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def N(self) -> int:
        return self.vectors.shape[1]

    def copy(self) -> "Codebook":
        return Codebook(self.vectors.copy(), self.ema_cluster_size.copy(), self.ema_embed_sum.copy())

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "N": self.N,
            "vectors": self.vectors.tolist(),
            "ema_cluster_size": self.ema_cluster_size.tolist(),
            "ema_embed_sum": self.ema_embed_sum.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Codebook":
        try:
            K, N = int(doc["K"]), int(doc["N"])
            cb = cls(np.asarray(doc["vectors"], dtype=np.float64).reshape(K, N),
                     np.asarray(doc["ema_cluster_size"], dtype=np.float64),
                     np.asarray(doc["ema_embed_sum"], dtype=np.float64).reshape(K, N))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed codebook document: {exc}") from exc
        return cb


@dataclass
class QuantizeOutput:
    indices: np.ndarray     # (L,) int64
    quantized: np.ndarray   # (L, N), exact codebook rows
    distances: np.ndarray   # (L, K)


def quantize(features, cb: Codebook) -> QuantizeOutput:
    """Nearest codeword per row; ties go to the lowest index."""
    features = as_matrix(features, "features")
    if features.shape[1] != cb.N:
        raise InputError(f"features have {features.shape[1]} columns, codebook dim is {cb.N}")
    distances = pairwise_sq_dist(features, cb.vectors)
    if features.shape[0] == 0:
        indices = np.zeros(0, dtype=np.int64)
    else:
        indices = np.argmin(distances, axis=1).astype(np.int64)
    return QuantizeOutput(indices, cb.vectors[indices].copy(), distances)


def straight_through(grad_wrt_quantized, shape=None) -> np.ndarray:
    """Backward pass of the quantizer: the identity."""
    g = np.asarray(grad_wrt_quantized, dtype=np.float64)
    if shape is not None and g.shape != tuple(shape):
        raise InputError(f"gradient shape {g.shape} does not match forward shape {tuple(shape)}")
    return g.copy()


def commitment_loss(features, quantized) -> float:
    """Mean over rows of ``||z_i - q_i||^2``."""
    z = as_matrix(features, "features")
    q = as_matrix(quantized, "quantized")
    if z.shape != q.shape:
        raise InputError(f"shape mismatch: {z.shape} vs {q.shape}")
    if z.shape[0] == 0:
        return 0.0
    d = z - q
    return float(np.mean(np.sum(d * d, axis=1)))


def commitment_grad(features, quantized) -> np.ndarray:
    """Gradient of :func:`commitment_loss` w.r.t. the features (quantized held constant)."""
    z = np.asarray(features, dtype=np.float64)
    q = np.asarray(quantized, dtype=np.float64)
    if z.shape != q.shape:
        raise InputError(f"shape mismatch: {z.shape} vs {q.shape}")
    return 2.0 * (z - q) / max(z.shape[0], 1)


def assignment_counts(indices, K: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise InputError(f"codeword index out of range [0, {K})")
    return np.bincount(idx, minlength=K).astype(np.int64)


def ema_kmeans_update(cb: Codebook, features, indices, gamma: float) -> np.ndarray:
    """One EMA k-means step; only codewords assigned in this batch are moved.

    Returns the per-codeword assignment counts of the batch.
    """
    if not 0.0 < gamma < 1.0:
        raise InputError(f"gamma must lie in (0, 1), got {gamma}")
    z = as_matrix(features, "features", cols=cb.N)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size != z.shape[0]:
        raise InputError("one index per feature row required")
    counts = assignment_counts(idx, cb.K)
    sums = np.zeros_like(cb.ema_embed_sum)
    np.add.at(sums, idx, z)

    cb.ema_cluster_size = gamma * cb.ema_cluster_size + (1.0 - gamma) * counts
    cb.ema_embed_sum = gamma * cb.ema_embed_sum + (1.0 - gamma) * sums
    used = counts > 0
    cb.vectors[used] = cb.ema_embed_sum[used] / (cb.ema_cluster_size[used, None] + EMA_DELTA)
    return counts
