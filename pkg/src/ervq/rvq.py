"""Residual quantization stack and the per-batch training schedule."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import losses
from .errors import InputError
from .losses import BalancingMode, LossBreakdown, LossWeights, SsimParams
from .numerics import Rng, as_matrix
from .online_clustering import (AnchorPolicy, UsageTracker, compute_decay, reinit_codewords,
                                sample_anchors, update_usage)
from .vq import Codebook, commitment_loss, ema_kmeans_update, quantize


class InitMode(str, enum.Enum):
    DATA_DRAW = "data_draw"
    PATHOLOGICAL = "pathological"


@dataclass
class QuantizationResult:
    summed: np.ndarray              # (L, N)
    indices: np.ndarray             # (L, M) int64
    stage_outputs: list             # M arrays (L, N)
    stage_inputs: list              # M arrays (L, N); stage_inputs[0] is the input itself
    final_residual: np.ndarray      # (L, N)


@dataclass
class RvqStack:
    """M codebooks applied in sequence to successive residuals.

    ``online_clustering`` switches the decay/anchor reinitialization on or
    off; with it off the stack is a plain EMA k-means RVQ.
    """

    codebooks: list
    trackers: list = field(default=None)
    anchor_policy: AnchorPolicy = AnchorPolicy.PROBABILISTIC
    weights: LossWeights = field(default_factory=LossWeights)
    ema_decay: float = 0.99
    online_clustering: bool = True
    balancing_mode: BalancingMode = BalancingMode.REVERSE
    ssim_params: SsimParams = field(default_factory=SsimParams)
    literal_paper_softmax: bool = False
    init_mode: InitMode = InitMode.DATA_DRAW
    initialized: list = field(default=None)

    def __post_init__(self):
        if len(self.codebooks) < 1:
            raise InputError("an RVQ stack needs at least one stage")
        dims = {cb.N for cb in self.codebooks}
        if len(dims) != 1:
            raise InputError(f"all stages must share one dimension, got {sorted(dims)}")
        if self.trackers is None:
            self.trackers = [UsageTracker(cb.K) for cb in self.codebooks]
        if len(self.trackers) != len(self.codebooks):
            raise InputError("one usage tracker per stage required")
        if self.initialized is None:
            self.initialized = [True] * len(self.codebooks)
        if not 0.0 < self.ema_decay < 1.0:
            raise InputError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")
        self.anchor_policy = AnchorPolicy(self.anchor_policy)
        self.balancing_mode = BalancingMode(self.balancing_mode)
        self.init_mode = InitMode(self.init_mode)

    @classmethod
    def create(cls, num_stages: int, K: int, N: int, gamma: float = 0.999, epsilon: float = 1e-3,
               **kwargs) -> "RvqStack":
        """Stack of zero codebooks, initialized from the first batch seen by :func:`train_step`."""
        return cls([Codebook.zeros(K, N) for _ in range(num_stages)],
                   [UsageTracker(K, gamma, epsilon) for _ in range(num_stages)],
                   initialized=[False] * num_stages, **kwargs)

    @property
    def M(self) -> int:
        return len(self.codebooks)

    @property
    def N(self) -> int:
        return self.codebooks[0].N

    def init_stage(self, m: int, inputs: np.ndarray, rng: Rng) -> None:
        cb = self.codebooks[m]
        L = inputs.shape[0]
        if L == 0:
            raise InputError("cannot initialize a codebook from an empty batch")
        if self.init_mode is InitMode.PATHOLOGICAL:
            cb.vectors = np.tile(inputs.mean(axis=0), (cb.K, 1))
        else:
            rows = rng.choice(L, size=cb.K, replace=L < cb.K)
            cb.vectors = inputs[rows].copy()
        self.initialized[m] = True

    def to_dict(self) -> dict:
        stages = []
        for cb, tr, init in zip(self.codebooks, self.trackers, self.initialized):
            doc = cb.to_dict()
            doc["usage_tracker"] = tr.to_dict()
            doc["initialized"] = bool(init)
            stages.append(doc)
        return {
            "stages": stages,
            "weights": self.weights.to_dict(),
            "anchor_policy": self.anchor_policy.value,
            "ema_decay": self.ema_decay,
            "online_clustering": self.online_clustering,
            "balancing_mode": self.balancing_mode.value,
            "ssim": {"c1": self.ssim_params.c1, "c2": self.ssim_params.c2},
            "literal_paper_softmax": self.literal_paper_softmax,
            "init_mode": self.init_mode.value,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RvqStack":
        try:
            stages = doc["stages"]
            codebooks = [Codebook.from_dict(s) for s in stages]
            trackers = [UsageTracker.from_dict(s["usage_tracker"]) if "usage_tracker" in s
                        else UsageTracker(cb.K) for s, cb in zip(stages, codebooks)]
            ssim = doc.get("ssim", {})
            return cls(
                codebooks, trackers,
                anchor_policy=doc.get("anchor_policy", "probabilistic"),
                weights=LossWeights(**doc.get("weights", {})),
                ema_decay=float(doc.get("ema_decay", 0.99)),
                online_clustering=bool(doc.get("online_clustering", True)),
                balancing_mode=doc.get("balancing_mode", "reverse"),
                ssim_params=SsimParams(**ssim),
                literal_paper_softmax=bool(doc.get("literal_paper_softmax", False)),
                init_mode=doc.get("init_mode", "data_draw"),
                initialized=[bool(s.get("initialized", True)) for s in stages],
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(f"malformed stack document: {exc}") from exc


def rvq_quantize(features, stack: RvqStack) -> QuantizationResult:
    """Quantize ``features`` stage by stage, each stage seeing the previous residual."""
    z = as_matrix(features, "features")
    if z.shape[1] != stack.N:
        raise InputError(f"features have {z.shape[1]} columns, stack dim is {stack.N}")
    residual = z
    summed = np.zeros_like(z)
    outs, ins, idx = [], [], []
    for cb in stack.codebooks:
        q = quantize(residual, cb)
        ins.append(residual)
        outs.append(q.quantized)
        idx.append(q.indices)
        summed = summed + q.quantized
        residual = residual - q.quantized
    return QuantizationResult(summed, np.stack(idx, axis=1), outs, ins, residual)


def decode(indices, stack: RvqStack) -> np.ndarray:
    """Sum of the selected codeword of every stage."""
    idx = np.asarray(indices)
    if idx.ndim != 2 or idx.shape[1] != stack.M:
        raise InputError(f"indices must have shape (L, {stack.M}), got {idx.shape}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise InputError("indices must be integers")
    out = np.zeros((idx.shape[0], stack.N))
    for m, cb in enumerate(stack.codebooks):
        col = idx[:, m]
        if col.size and (col.min() < 0 or col.max() >= cb.K):
            raise InputError(f"stage {m} index out of range [0, {cb.K})")
        out = out + cb.vectors[col]
    return out


def ensure_initialized(features, stack: RvqStack, rng: Rng) -> None:
    """Initialize any stage that has not yet seen data, from this batch's residuals."""
    if all(stack.initialized):
        return
    residual = as_matrix(features, "features", cols=stack.N)
    for m, cb in enumerate(stack.codebooks):
        if not stack.initialized[m]:
            stack.init_stage(m, residual, rng)
        residual = residual - quantize(residual, cb).quantized


def train_step(features, stack: RvqStack, rng: Rng) -> tuple[QuantizationResult, LossBreakdown]:
    """Quantize one batch and update every stage's codebook.

    Per stage: quantize, update usage, EMA k-means on the assigned codewords,
    then (with online clustering) compute decays, draw anchors and pull every
    codeword toward its anchor. The returned result reflects the codebooks
    as they were *before* this batch's updates. The breakdown's ``codec_loss``
    is left at zero for the caller to fill in.
    """
    z = as_matrix(features, "features", cols=stack.N)
    if z.shape[0] == 0:
        raise InputError("empty training batch")
    ensure_initialized(z, stack, rng)

    L = z.shape[0]
    residual = z
    summed = np.zeros_like(z)
    outs, ins, idx = [], [], []
    for cb, tr in zip(stack.codebooks, stack.trackers):
        q = quantize(residual, cb)
        ins.append(residual)
        outs.append(q.quantized)
        idx.append(q.indices)

        counts = ema_kmeans_update(cb, residual, q.indices, stack.ema_decay)
        update_usage(tr, counts, L)
        if stack.online_clustering:
            decay = compute_decay(tr, cb.K)
            anchors = sample_anchors(residual, q.distances, stack.anchor_policy, rng,
                                     stack.literal_paper_softmax)
            reinit_codewords(cb, decay, anchors)

        summed = summed + q.quantized
        residual = residual - q.quantized

    result = QuantizationResult(summed, np.stack(idx, axis=1), outs, ins, residual)
    breakdown = step_losses(result, stack)
    return result, breakdown


def step_losses(result: QuantizationResult, stack: RvqStack, codec_loss: float = 0.0) -> LossBreakdown:
    """Loss values of one quantized batch (hard assignments)."""
    w = stack.weights
    commit = commitment_loss(result.stage_inputs[0], result.summed)
    posteriors = [losses.posterior_distribution(result.indices[:, m], cb.K)
                  for m, cb in enumerate(stack.codebooks)]
    bal = losses.code_balancing_loss(posteriors, stack.balancing_mode)
    sim = losses.inter_codebook_ssim_loss(result.stage_outputs, stack.ssim_params)
    total = losses.total_loss(codec_loss + w.commitment_weight * commit, bal, sim, w)
    return LossBreakdown(codec_loss, commit, bal, sim, total)
