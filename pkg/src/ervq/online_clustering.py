"""Usage tracking and decay-weighted reinitialization of underused codewords.

Each batch a codeword's running usage is updated, turned into a decay
coefficient in (0, exp(-eps)], and the codeword is pulled toward an anchor
feature drawn from the batch by that coefficient. Rarely used codewords get
decay close to one and are effectively replaced; busy ones barely move.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .numerics import Rng, as_matrix, softmax
from .vq import Codebook

#: Scale of the usage term in the decay exponent.
DECAY_SCALE = 10.0


class AnchorPolicy(str, enum.Enum):
    PROBABILISTIC = "probabilistic"
    RANDOM = "random"
    CLOSEST = "closest"


@dataclass
class UsageTracker:
    K: int
    gamma: float = 0.999
    epsilon: float = 1e-3
    usage: np.ndarray = field(default=None)
    decay: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.K < 1:
            raise InputError("K must be >= 1")
        if not 0.0 < self.gamma < 1.0:
            raise InputError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not self.epsilon >= 0.0:
            raise InputError(f"epsilon must be >= 0, got {self.epsilon}")
        self.usage = np.zeros(self.K) if self.usage is None else np.array(self.usage, dtype=np.float64)
        if self.decay is None:
            self.decay = np.full(self.K, np.exp(-self.epsilon))
        self.decay = np.array(self.decay, dtype=np.float64)
        if self.usage.shape != (self.K,) or self.decay.shape != (self.K,):
            raise InputError("usage/decay length must equal K")

    def to_dict(self) -> dict:
        return {"K": self.K, "gamma": self.gamma, "epsilon": self.epsilon,
                "usage": self.usage.tolist(), "decay": self.decay.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "UsageTracker":
        try:
            return cls(int(doc["K"]), float(doc["gamma"]), float(doc["epsilon"]),
                       doc["usage"], doc["decay"])
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed usage_tracker document: {exc}") from exc


def update_usage(tr: UsageTracker, counts, total_L: int) -> np.ndarray:
    """``U_k <- U_k * gamma + (u_k / L) * (1 - gamma)``."""
    counts = np.asarray(counts, dtype=np.float64).ravel()
    if counts.shape != (tr.K,):
        raise InputError(f"expected {tr.K} counts, got {counts.size}")
    if total_L < 1 or np.any(counts < 0) or counts.sum() != total_L:
        raise InputError(f"counts sum to {counts.sum()}, expected total_L={total_L} >= 1")
    tr.usage = tr.usage * tr.gamma + (counts / total_L) * (1.0 - tr.gamma)
    return tr.usage


def compute_decay(tr: UsageTracker, K: int | None = None) -> np.ndarray:
    """``d_k = exp(-U_k * K * 10 / (1 - gamma) - eps)``."""
    K = tr.K if K is None else K
    tr.decay = np.exp(-tr.usage * K * DECAY_SCALE / (1.0 - tr.gamma) - tr.epsilon)
    return tr.decay


def anchor_probabilities(distances, literal_paper_softmax: bool = False) -> np.ndarray:
    """Column-wise sampling distribution over the L batch features, one column per codeword.

    By default near features are favored (softmax of negative distance);
    ``literal_paper_softmax`` uses the raw distances, which favors far ones.
    """
    d = np.asarray(distances, dtype=np.float64)
    return softmax(d if literal_paper_softmax else -d, axis=0)


def sample_anchors(features, distances, policy: AnchorPolicy | str, rng: Rng,
                   literal_paper_softmax: bool = False) -> np.ndarray:
    """Pick one anchor feature per codeword (K x N)."""
    z = as_matrix(features, "features")
    L = z.shape[0]
    if L == 0:
        raise InputError("cannot sample anchors from an empty feature batch")
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != L:
        raise InputError(f"distances shape {d.shape} does not match {L} features")
    K = d.shape[1]
    policy = AnchorPolicy(policy)

    if policy is AnchorPolicy.CLOSEST:
        chosen = np.argmin(d, axis=0)
    elif policy is AnchorPolicy.RANDOM:
        chosen = rng.integers(L, size=K)
    else:
        cdf = np.cumsum(anchor_probabilities(d, literal_paper_softmax), axis=0)
        u = rng.uniform(K) * cdf[-1]
        chosen = np.minimum(np.sum(cdf <= u[None, :], axis=0), L - 1)
    return z[chosen].copy()


def reinit_codewords(cb: Codebook, decay, anchors) -> None:
    """``e_k <- e_k * (1 - d_k) + anchor_k * d_k`` for every codeword."""
    decay = np.asarray(decay, dtype=np.float64).ravel()
    anchors = as_matrix(anchors, "anchors")
    if anchors.shape != cb.vectors.shape or decay.shape != (cb.K,):
        raise InputError(f"anchors {anchors.shape} / decay {decay.shape} do not match codebook {cb.vectors.shape}")
    # e + d (a - e) is algebraically the same convex combination and leaves e
    # bit-identical when the anchor coincides with it.
    cb.vectors = cb.vectors + decay[:, None] * (anchors - cb.vectors)
