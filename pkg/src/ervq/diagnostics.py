"""Codebook health: utilization rate, perplexity and bitrate efficiency.

All entropies are in bits. Counts should be accumulated over a whole
evaluation pass; :class:`CodebookStats` bundles one stage's numbers.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ErvqIOError, InputError
from .formats import atomic_write_text, read_indices
from .numerics import as_matrix
from .rvq import RvqStack, rvq_quantize


def _counts(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=np.float64).ravel()
    if c.size == 0 or np.any(c < 0):
        raise InputError("counts must be a non-empty nonnegative vector")
    return c


def entropy_bits(counts) -> float:
    c = _counts(counts)
    total = c.sum()
    if total <= 0:
        raise InputError("entropy of an all-zero count vector")
    p = c[c > 0] / total
    return float(-np.sum(p * np.log2(p)))


def utilization_rate(counts) -> float:
    c = _counts(counts)
    return float(np.count_nonzero(c) / c.size)


def perplexity(counts) -> float:
    """``2 ** H`` with ``H`` the code-selection entropy in bits (``0 log 0 = 0``)."""
    return float(2.0 ** entropy_bits(counts))


def bitrate_efficiency(counts_per_stage: Sequence) -> float:
    """Summed per-stage entropy over the nominal ``M log2 K`` bits."""
    if len(counts_per_stage) == 0:
        raise InputError("no stages given")
    H = 0.0
    nominal = 0.0
    for c in counts_per_stage:
        c = _counts(c)
        if c.sum() == 0:
            raise InputError("a stage has no assigned features")
        H += entropy_bits(c)
        nominal += math.log2(c.size)
    if nominal == 0:
        return 1.0  # K == 1 everywhere: no bits to waste
    return H / nominal


@dataclass
class CodebookStats:
    counts: np.ndarray
    total: int
    utilization: float
    perplexity: float
    per_code_freq: np.ndarray

    @classmethod
    def from_counts(cls, counts) -> "CodebookStats":
        c = np.asarray(counts, dtype=np.int64).ravel()
        total = int(c.sum())
        if total == 0:
            raise InputError("no features were quantized")
        return cls(c, total, utilization_rate(c), perplexity(c), c / total)


def counts_from_indices(indices, K: int) -> list[np.ndarray]:
    """Per-stage codeword counts of an ``(L, M)`` index matrix."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 2:
        raise InputError(f"indices must be (L, M), got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise InputError(f"index out of range [0, {K})")
    return [np.bincount(idx[:, m], minlength=K) for m in range(idx.shape[1])]


def report(counts_per_stage: Sequence) -> dict:
    stages = [CodebookStats.from_counts(c) for c in counts_per_stage]
    return {
        "per_stage": [{"utilization": s.utilization, "perplexity": s.perplexity, "total": s.total}
                      for s in stages],
        "bitrate_efficiency": bitrate_efficiency([s.counts for s in stages]),
    }


def report_from_indices(indices, K: int) -> dict:
    return report(counts_from_indices(indices, K))


def report_from_index_file(path) -> dict:
    idx, K = read_indices(path)
    return report_from_indices(idx, K)


def report_csv(rep: dict) -> str:
    buf = io.StringIO()
    buf.write("stage,utilization,perplexity,total,bitrate_efficiency\n")
    for m, s in enumerate(rep["per_stage"]):
        buf.write(f"{m},{s['utilization']!r},{s['perplexity']!r},{s['total']},{rep['bitrate_efficiency']!r}\n")
    return buf.getvalue()


def write_report(rep: dict, json_path, csv_path=None) -> None:
    atomic_write_text(json_path, json.dumps(rep, indent=1) + "\n")
    if csv_path is not None:
        atomic_write_text(csv_path, report_csv(rep))


def export_embedding_dump(stack: RvqStack, features, path) -> None:
    """Write codebook rows and each stage's pre-quantization inputs as JSON.

    Intended for external visualization (e.g. t-SNE of features vs codes).
    An empty feature batch yields a dump of the codebooks only.
    """
    z = as_matrix(features, "features") if np.size(features) else np.zeros((0, stack.N))
    doc = {"stages": [{"stage": m, "codebook": cb.vectors.tolist()} for m, cb in enumerate(stack.codebooks)]}
    if z.shape[0]:
        for entry, inputs in zip(doc["stages"], rvq_quantize(z, stack).stage_inputs):
            entry["features"] = inputs.tolist()
    try:
        atomic_write_text(path, json.dumps(doc) + "\n")
    except OSError as exc:
        raise ErvqIOError(f"cannot write embedding dump to {path}: {exc}") from exc


def load_embedding_dump(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return [{"codebook": np.asarray(s["codebook"], dtype=np.float64).reshape(len(s["codebook"]), -1),
             "features": np.asarray(s.get("features", []), dtype=np.float64)} for s in doc["stages"]]
