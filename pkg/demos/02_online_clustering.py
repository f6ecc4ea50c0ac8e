"""
Rescuing dead codewords
=======================

A codeword that no feature selects never gets an EMA update, so plain
EMA k-means leaves it stranded. Online clustering tracks how often each
codeword is used and pulls rarely used ones toward features sampled from
the batch.
"""

# %%
import math

import numpy as np

from ervq import Codebook, Rng, RvqStack, UsageTracker, train_step
from ervq.online_clustering import compute_decay

# %%
# The decay coefficient as a function of running usage. Unused codewords sit
# at exp(-eps), close to 1 (full replacement); a codeword at its fair share
# 1/K barely moves.
K, gamma = 16, 0.99
tr = UsageTracker(K, gamma, 1e-3, usage=np.linspace(0, 2 / K, K))
for u, d in zip(tr.usage[::3], compute_decay(tr)[::3]):
    print(f"usage {u:.4f}  decay {d:.3e}")
print("exp(-eps) =", math.exp(-1e-3))

# %%
# Two data clusters, three codewords, one of them far off at (50, 50).
rng = Rng(1)
centers = np.array([[1.0, 0.0], [-1.0, 0.0]])


def batch():
    return centers[rng.integers(2, size=64)] + 0.05 * rng.normal((64, 2))


def run(online: bool):
    start = np.array([[1.0, 0.0], [-1.0, 0.0], [50.0, 50.0]])
    stack = RvqStack([Codebook(start)], [UsageTracker(3, gamma, 1e-3)], online_clustering=online)
    for _ in range(200):
        train_step(batch(), stack, rng)
    return stack


for online in (False, True):
    stack = run(online)
    print("online" if online else "plain ", np.round(stack.codebooks[0].vectors, 3).tolist(),
          "usage", np.round(stack.trackers[0].usage, 3).tolist())

# %%
# With plain EMA the third codeword is still at (50, 50). With online
# clustering it was pulled onto the data and now shares the load.
