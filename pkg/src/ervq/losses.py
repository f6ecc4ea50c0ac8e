"""Code-balancing loss, inter-codebook SSIM loss and the weighted total.

Every differentiable term comes with a hand-written gradient so that the
trainer needs no autodiff; ``tests/test_gradients.py`` checks them against
central finite differences.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .errors import InputError
from .numerics import as_matrix, pairwise_sq_dist, softmax

#: Smoothing inside the log of the reverse balancing loss.
BALANCING_DELTA = 1e-8


class BalancingMode(str, enum.Enum):
    LITERAL = "literal"   # -sum_k f_k log(1/K): constant value M log K
    REVERSE = "reverse"   # -sum_k (1/K) log(f_k + delta): minimized at uniform f


@dataclass(frozen=True)
class SsimParams:
    c1: float = 1e-4
    c2: float = 9e-4

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise InputError("SSIM constants must be strictly positive")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.1
    beta: float = 0.01
    commitment_weight: float = 0.25

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise InputError(f"loss weight {f.name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "commitment_weight": self.commitment_weight}


@dataclass
class LossBreakdown:
    codec_loss: float = 0.0
    commitment: float = 0.0
    balancing: float = 0.0
    ssim: float = 0.0
    total: float = 0.0

    CSV_HEADER = ("step", "codec_loss", "commitment", "balancing", "ssim", "total")

    def csv_row(self, step: int) -> str:
        vals = (self.codec_loss, self.commitment, self.balancing, self.ssim, self.total)
        return ",".join([str(step)] + [repr(float(v)) for v in vals])


# --- code balancing -------------------------------------------------------

def posterior_distribution(indices, K: int) -> np.ndarray:
    """Fraction of the batch assigned to each of the K codewords."""
    idx = np.asarray(indices, dtype=np.int64).ravel()
    if idx.size == 0:
        raise InputError("posterior of an empty index batch")
    if idx.min() < 0 or idx.max() >= K:
        raise InputError(f"codeword index out of range [0, {K})")
    return np.bincount(idx, minlength=K) / idx.size


def code_balancing_loss(posteriors: Sequence[np.ndarray], mode: BalancingMode | str = "reverse",
                        delta: float = BALANCING_DELTA) -> float:
    """Sum over stages of the cross-entropy between the posterior and the uniform prior."""
    mode = BalancingMode(mode)
    total = 0.0
    literal_terms = []
    for f in posteriors:
        f = np.asarray(f, dtype=np.float64)
        K = f.size
        if mode is BalancingMode.LITERAL:
            # -sum_k f_k log(1/K) = log K * sum_k f_k, and a posterior sums to one
            if np.any(f < 0) or abs(math.fsum(f) - 1.0) > 1e-9:
                raise InputError("literal balancing needs posteriors on the probability simplex")
            literal_terms.append(math.log(K))
        else:
            total += -float(np.sum(np.log(f + delta))) / K
    if mode is BalancingMode.LITERAL:
        # fsum makes M equal terms come out as exactly M * log K
        return math.fsum(literal_terms)
    return total


def soft_assignments(inputs, codebook_vectors, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax over negative squared distances (L x K)."""
    d = pairwise_sq_dist(inputs, codebook_vectors)
    return softmax(-d / temperature, axis=1)


def soft_balancing_loss(stage_inputs: Sequence[np.ndarray], codebooks: Sequence[np.ndarray],
                        mode: BalancingMode | str = "reverse", temperature: float = 1.0,
                        delta: float = BALANCING_DELTA) -> tuple[float, list[np.ndarray]]:
    """Balancing loss over soft assignments, and its gradient w.r.t. each stage's input.

    This is the relaxation used for backpropagation: the hard one-hot rows
    are replaced by ``softmax(-||r_i - e_k||^2 / temperature)``.
    """
    mode = BalancingMode(mode)
    value = 0.0
    grads = []
    for r, e in zip(stage_inputs, codebooks):
        r = np.asarray(r, dtype=np.float64)
        e = np.asarray(e, dtype=np.float64)
        L, K = r.shape[0], e.shape[0]
        q = soft_assignments(r, e, temperature)
        f = q.mean(axis=0)
        if mode is BalancingMode.LITERAL:
            value += -math.log(1.0 / K) * float(f.sum())
            g_f = np.full(K, -math.log(1.0 / K))
        else:
            value += -float(np.sum(np.log(f + delta))) / K
            g_f = -1.0 / (K * (f + delta))
        g_q = np.broadcast_to(g_f / L, q.shape)
        # softmax backward, then scores s_ik = -||r_i - e_k||^2 / T
        g_s = q * (g_q - np.sum(q * g_q, axis=1, keepdims=True))
        # d s_ik / d r_i = -2 (r_i - e_k) / T
        g_r = -2.0 / temperature * (g_s.sum(axis=1, keepdims=True) * r - g_s @ e)
        grads.append(g_r)
    return value, grads


# --- SSIM -----------------------------------------------------------------

def _row_ssim(x: np.ndarray, y: np.ndarray, p: SsimParams):
    mx = x.mean(axis=1, keepdims=True)
    my = y.mean(axis=1, keepdims=True)
    dx = x - mx
    dy = y - my
    vx = np.mean(dx * dx, axis=1, keepdims=True)
    vy = np.mean(dy * dy, axis=1, keepdims=True)
    cxy = np.mean(dx * dy, axis=1, keepdims=True)
    a = 2 * mx * my + p.c1
    b = 2 * cxy + p.c2
    c = mx * mx + my * my + p.c1
    d = vx + vy + p.c2
    return (a * b) / (c * d), (mx, my, dx, dy, a, b, c, d)


def ssim(x, y, p: SsimParams = SsimParams()) -> float:
    """Whole-vector structural similarity with population moments."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise InputError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise InputError("ssim needs vectors of length >= 2")
    if np.array_equal(x, y):
        return 1.0
    s, _ = _row_ssim(x[None, :], y[None, :], p)
    return float(s[0, 0])


def rowwise_ssim(x, y, p: SsimParams = SsimParams()) -> np.ndarray:
    """SSIM of each row pair of two L x N matrices."""
    x = as_matrix(x, "x")
    y = as_matrix(y, "y")
    if x.shape != y.shape:
        raise InputError(f"shape mismatch: {x.shape} vs {y.shape}")
    s, _ = _row_ssim(x, y, p)
    s = s[:, 0]
    s[np.all(x == y, axis=1)] = 1.0
    return s


def rowwise_ssim_grad(x, y, p: SsimParams = SsimParams()) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of ``sum_i ssim(x_i, y_i)`` w.r.t. ``x`` and ``y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.shape[1]
    s, (mx, my, dx, dy, a, b, c, d) = _row_ssim(x, y, p)

    def grad(mu_self, mu_other, dev_self, dev_other):
        da = 2 * mu_other / n
        db = 2 * dev_other / n
        dc = 2 * mu_self / n
        dd = 2 * dev_self / n
        return (da * b + a * db) / (c * d) - s * (dc / c + dd / d)

    return grad(mx, my, dx, dy), grad(my, mx, dy, dx)


def inter_codebook_ssim_loss(stage_outputs: Sequence[np.ndarray], p: SsimParams = SsimParams()) -> float:
    """Sum over adjacent stage pairs of the batch-mean row SSIM."""
    outs = [as_matrix(o, "stage output") for o in stage_outputs]
    if not outs:
        raise InputError("at least one stage output required")
    if any(o.shape != outs[0].shape for o in outs):
        raise InputError("stage outputs must share a shape")
    if len(outs) == 1 or outs[0].shape[0] == 0:
        return 0.0
    return float(sum(np.mean(rowwise_ssim(outs[m], outs[m + 1], p)) for m in range(len(outs) - 1)))


def inter_codebook_ssim_grad(stage_outputs: Sequence[np.ndarray], p: SsimParams = SsimParams()) -> list[np.ndarray]:
    """Gradient of :func:`inter_codebook_ssim_loss` w.r.t. every stage output."""
    outs = [np.asarray(o, dtype=np.float64) for o in stage_outputs]
    grads = [np.zeros_like(o) for o in outs]
    if len(outs) < 2 or outs[0].shape[0] == 0:
        return grads
    L = outs[0].shape[0]
    for m in range(len(outs) - 1):
        gx, gy = rowwise_ssim_grad(outs[m], outs[m + 1], p)
        grads[m] += gx / L
        grads[m + 1] += gy / L
    return grads


def total_loss(codec_loss: float, balancing: float, ssim_term: float, w: LossWeights) -> float:
    """``codec + alpha * balancing + beta * ssim``."""
    vals = (codec_loss, balancing, ssim_term)
    if not all(math.isfinite(v) for v in vals):
        raise InputError(f"non-finite loss component in {vals}")
    return codec_loss + w.alpha * balancing + w.beta * ssim_term
