"""Feature sources: a Gaussian-mixture generator and 16-bit PCM WAV ingestion."""

from __future__ import annotations

import enum
import io
import logging
import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .formats import atomic_write_bytes
from .numerics import Rng, as_matrix

log = logging.getLogger(__name__)


@dataclass
class MixtureSpec:
    centers: np.ndarray
    scale: float
    weights: np.ndarray = None

    def __post_init__(self):
        self.centers = as_matrix(self.centers, "centers")
        if self.centers.shape[0] < 1:
            raise InputError("mixture needs at least one cluster")
        if not self.scale >= 0:
            raise InputError("scale must be nonnegative")
        if self.weights is None:
            self.weights = np.full(self.clusters, 1.0 / self.clusters)
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if self.weights.shape != (self.clusters,) or np.any(self.weights < 0):
            raise InputError("weights must be a nonnegative vector, one entry per cluster")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise InputError(f"weights sum to {self.weights.sum()}, expected 1")

    @property
    def clusters(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @classmethod
    def random(cls, clusters: int, dim: int, rng: Rng, spread: float = 1.0, scale: float = 0.05):
        """Centers drawn uniformly from ``[-spread, spread]^dim``."""
        centers = (2.0 * rng.uniform((clusters, dim)) - 1.0) * spread
        return cls(centers, scale)

    def to_dict(self) -> dict:
        return {"centers": self.centers.tolist(), "scale": self.scale, "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> "MixtureSpec":
        return cls(np.asarray(doc["centers"], dtype=np.float64), float(doc["scale"]), doc.get("weights"))


def sample_mixture(spec: MixtureSpec, n: int, rng: Rng, return_labels: bool = False):
    """``n`` rows: a cluster chosen by weight, plus isotropic Gaussian noise."""
    labels = rng.choice(spec.clusters, size=n, p=spec.weights)
    noise = rng.normal((n, spec.dim)) * spec.scale
    x = spec.centers[labels] + noise
    return (x, labels) if return_labels else x


# --- WAV ------------------------------------------------------------------

class WavError(FormatError):
    """Malformed or unsupported WAV file."""


def read_wav(path) -> tuple[int, np.ndarray]:
    """Read a RIFF/WAVE PCM-16 file; returns ``(sample_rate, samples in [-1, 1))``.

    Multi-channel files are reduced to channel 0 with a warning.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12:
        raise WavError(f"{path}: RIFF header truncated")
    riff, _, wave = struct.unpack_from("<4sI4s", data, 0)
    if riff != b"RIFF" or wave != b"WAVE":
        raise WavError(f"{path}: RIFF header is not RIFF/WAVE")

    fmt = None
    pcm = None
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        name = cid.decode("latin-1")
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavError(f"{path}: 'fmt ' chunk truncated ({len(body)} bytes)")
            tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", body, 0)
            if tag != 1:
                raise WavError(f"{path}: 'fmt ' chunk has unsupported audio format tag {tag} (only PCM=1)")
            if bits != 16:
                raise WavError(f"{path}: 'fmt ' chunk has {bits} bits per sample (only 16 supported)")
            if channels < 1 or block_align != 2 * channels:
                raise WavError(f"{path}: 'fmt ' chunk has inconsistent channels/block_align")
            fmt = (channels, rate)
        elif cid == b"data":
            if fmt is None:
                raise WavError(f"{path}: 'data' chunk precedes 'fmt ' chunk")
            if len(body) < size:
                raise WavError(f"{path}: 'data' chunk truncated ({len(body)} of {size} bytes)")
            pcm = body
            break
        elif len(body) < size:
            raise WavError(f"{path}: '{name}' chunk truncated")
        pos += 8 + size + (size & 1)

    if fmt is None:
        raise WavError(f"{path}: missing 'fmt ' chunk")
    if pcm is None:
        raise WavError(f"{path}: missing 'data' chunk")
    channels, rate = fmt
    if len(pcm) % (2 * channels):
        raise WavError(f"{path}: 'data' chunk length {len(pcm)} is not a whole number of frames")
    samples = np.frombuffer(pcm, dtype="<i2").reshape(-1, channels)
    if channels > 1:
        log.warning("%s has %d channels; using channel 0", path, channels)
    return rate, samples[:, 0].astype(np.float64) / 32768.0


def write_wav(path, samples, sample_rate: int = 16000) -> None:
    """Mono PCM-16 writer (values clipped to the representable range)."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    ints = np.clip(np.round(x * 32768.0), -32768, 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(sample_rate)
        w.writeframes(ints.tobytes())
    atomic_write_bytes(path, buf.getvalue())


# --- framing --------------------------------------------------------------

class Normalization(str, enum.Enum):
    NONE = "none"
    PEAK = "per-frame-unit-peak"


@dataclass(frozen=True)
class FrameSpec:
    frame_length: int
    hop: int
    normalization: Normalization = Normalization.NONE

    def __post_init__(self):
        if not 1 <= self.hop <= self.frame_length:
            raise InputError(f"need 1 <= hop <= frame_length, got hop={self.hop}, frame={self.frame_length}")
        object.__setattr__(self, "normalization", Normalization(self.normalization))


def frame(samples, spec: FrameSpec) -> np.ndarray:
    """Cut ``samples`` into ``1 + (len - frame_length) // hop`` overlapping rows."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < spec.frame_length:
        raise InputError(f"signal of {x.size} samples is shorter than one frame ({spec.frame_length})")
    T = 1 + (x.size - spec.frame_length) // spec.hop
    starts = np.arange(T) * spec.hop
    frames = x[starts[:, None] + np.arange(spec.frame_length)[None, :]]
    if spec.normalization is Normalization.PEAK:
        peak = np.max(np.abs(frames), axis=1, keepdims=True)
        frames = np.divide(frames, peak, out=np.zeros_like(frames), where=peak > 0)
    return frames
