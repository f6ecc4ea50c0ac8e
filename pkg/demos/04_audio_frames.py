"""
Quantizing audio frames
=======================

Frames of a PCM-16 WAV file play the role of feature rows. Here the
signal is synthesized (a chirp plus noise), written to disk, read back and
cut into overlapping frames, which then train a small stack.
"""

# %%
import tempfile
from pathlib import Path

import numpy as np

from ervq import Rng, RvqStack, rvq_quantize, train_step
from ervq import diagnostics
from ervq.data_io import FrameSpec, frame, read_wav, write_wav

rng = Rng(3)
t = np.arange(16000) / 16000
signal = 0.5 * np.sin(2 * np.pi * (200 + 300 * t) * t) + 0.02 * rng.normal(t.size)

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "chirp.wav"
    write_wav(path, signal, 16000)
    rate, samples = read_wav(path)
print(rate, "Hz,", samples.size, "samples, max round-trip error",
      f"{np.max(np.abs(samples - signal)) * 32768:.2f} LSB")

# %%
# 16-sample frames with a hop of 8, each scaled to unit peak.
frames = frame(samples, FrameSpec(16, 8, "per-frame-unit-peak"))
print(frames.shape)

# %%
# Two stages of 32 codewords, trained online on shuffled mini-batches.
stack = RvqStack.create(2, 32, 16, gamma=0.99)
for _ in range(300):
    train_step(frames[rng.integers(frames.shape[0], size=128)], stack, rng)

res = rvq_quantize(frames, stack)
print(diagnostics.report_from_indices(res.indices, 32))
print("relative error", np.linalg.norm(res.final_residual) / np.linalg.norm(frames))
