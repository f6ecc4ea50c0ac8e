"""Binary index streams, float32 matrix files, JSON documents and atomic writes.

Index stream::

    b"ERVQIDX1" | M, K, L as <u4 | L*M indices as <u4, row-major

Matrix file::

    b"ERVQMAT1" | rows, cols as <u4 | rows*cols values as <f4, row-major
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError

INDEX_MAGIC = b"ERVQIDX1"
MATRIX_MAGIC = b"ERVQMAT1"
_HEADER3 = struct.Struct("<III")
_HEADER2 = struct.Struct("<II")


def atomic_write_bytes(path, data: bytes) -> None:
    """Write ``data`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(path, doc) -> None:
    atomic_write_text(path, json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_json(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def encode_indices(indices, K: int) -> bytes:
    idx = np.asarray(indices)
    if idx.ndim != 2:
        raise InputError(f"indices must be 2-D (L, M), got shape {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise InputError(f"index out of range [0, {K})")
    L, M = idx.shape
    return INDEX_MAGIC + _HEADER3.pack(M, K, L) + idx.astype("<u4").tobytes(order="C")


def decode_indices(data: bytes) -> tuple[np.ndarray, int]:
    """Return ``(indices (L, M) int64, K)``."""
    head = len(INDEX_MAGIC) + _HEADER3.size
    if len(data) < head or data[:len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise FormatError("not an index stream (bad magic or short header)")
    M, K, L = _HEADER3.unpack_from(data, len(INDEX_MAGIC))
    expected = head + 4 * L * M
    if len(data) != expected:
        raise FormatError(f"index stream payload is {len(data) - head} bytes, expected {4 * L * M}")
    idx = np.frombuffer(data, dtype="<u4", offset=head).reshape(L, M).astype(np.int64)
    if idx.size and idx.max() >= K:
        raise FormatError(f"index stream contains index {idx.max()} >= K={K}")
    return idx, K


def write_indices(path, indices, K: int) -> None:
    atomic_write_bytes(path, encode_indices(indices, K))


def read_indices(path) -> tuple[np.ndarray, int]:
    return decode_indices(Path(path).read_bytes())


def encode_matrix(values) -> bytes:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2:
        raise InputError(f"matrix must be 2-D, got shape {m.shape}")
    rows, cols = m.shape
    return MATRIX_MAGIC + _HEADER2.pack(rows, cols) + m.astype("<f4").tobytes(order="C")


def decode_matrix(data: bytes) -> np.ndarray:
    head = len(MATRIX_MAGIC) + _HEADER2.size
    if len(data) < head or data[:len(MATRIX_MAGIC)] != MATRIX_MAGIC:
        raise FormatError("not a matrix file (bad magic or short header)")
    rows, cols = _HEADER2.unpack_from(data, len(MATRIX_MAGIC))
    if len(data) != head + 4 * rows * cols:
        raise FormatError(f"matrix payload is {len(data) - head} bytes, expected {4 * rows * cols}")
    return np.frombuffer(data, dtype="<f4", offset=head).reshape(rows, cols).astype(np.float64)


def write_matrix(path, values) -> None:
    atomic_write_bytes(path, encode_matrix(values))


def read_matrix(path) -> np.ndarray:
    return decode_matrix(Path(path).read_bytes())
