"""Numeric primitives shared by the quantizer, the losses and the trainer.

Matrices are plain ``float64`` numpy arrays of shape ``(rows, cols)``; the
helpers here validate shape and finiteness at the library boundary so the
inner code can stay free of checks.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InputError


def as_matrix(values, name: str = "matrix", cols: int | None = None) -> np.ndarray:
    """Return ``values`` as a finite 2-D float64 array (copying only when needed)."""
    m = np.asarray(values, dtype=np.float64)
    if m.ndim == 1 and m.size == 0:
        m = m.reshape(0, cols or 0)
    if m.ndim != 2:
        raise InputError(f"{name} must be 2-D, got shape {m.shape}")
    if cols is not None and m.shape[1] != cols:
        raise InputError(f"{name} has {m.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(m)):
        raise InputError(f"{name} contains NaN or Inf")
    return m


def pairwise_sq_dist(a, b) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``a`` (L x N) and ``b`` (K x N).

    Columns are accumulated left to right, so the result for each pair is
    bit-identical to a scalar loop ``sum((a[i, j] - b[k, j]) ** 2 for j)``.
    This matters for tie-breaking in nearest-codeword search.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise InputError(f"dimension mismatch: a has {a.shape[1]} columns, b has {b.shape[1]}")
    out = np.zeros((a.shape[0], b.shape[0]))
    for j in range(a.shape[1]):
        diff = a[:, j, None] - b[None, :, j]
        out += diff * diff
    return out


def softmax(v, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtracted) along ``axis``."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise InputError("softmax of an empty vector")
    if not np.all(np.isfinite(v)):
        raise InputError("softmax input contains NaN or Inf")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


class Moments(NamedTuple):
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov_xy: float


def stats(x, y) -> Moments:
    """Population (divide-by-n) means, variances and covariance of two vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size:
        raise InputError(f"length mismatch: {x.size} vs {y.size}")
    if x.size == 0:
        raise InputError("stats of empty vectors")
    mx = x.mean()
    my = y.mean()
    dx = x - mx
    dy = y - my
    return Moments(float(mx), float(my), float(np.mean(dx * dx)), float(np.mean(dy * dy)),
                   float(np.mean(dx * dy)))


class Rng:
    """Seedable random source.

    Backed by numpy's PCG64 bit generator (a 128-bit LCG with a permuted
    output function). The same seed always yields the same stream.
    """

    def __init__(self, seed: int = 0):
        if seed < 0 or seed >= 2**64:
            raise InputError("seed must be a 64-bit unsigned integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None) -> np.ndarray:
        return self._gen.random(size)

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def integers(self, high: int, size=None) -> np.ndarray:
        return self._gen.integers(0, high, size=size)

    def choice(self, n: int, size: int, replace: bool = True, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace, p=p)

    def spawn(self, offset: int) -> "Rng":
        """Independent generator derived from this seed (for separate data streams)."""
        return Rng((self.seed * 0x9E3779B97F4A7C15 + offset + 1) % 2**64)

    @property
    def state(self) -> dict:
        return self._gen.bit_generator.state
