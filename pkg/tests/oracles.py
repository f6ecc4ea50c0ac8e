"""Independent scalar-loop reference implementations used by the tests.

Deliberately written without numpy vectorization and without importing the
library, so a bug in the vectorized code cannot leak into its own oracle.
"""

import math


def sq_dist(u, v):
    s = 0.0
    for a, b in zip(u, v):
        d = float(a) - float(b)
        s += d * d
    return s


def nearest(row, codebook):
    best, best_d = 0, None
    for k, e in enumerate(codebook):
        d = sq_dist(row, e)
        if best_d is None or d < best_d:
            best, best_d = k, d
    return best


def usage_step(usage, counts, L, gamma):
    return [u * gamma + (c / L) * (1 - gamma) for u, c in zip(usage, counts)]


def decay(usage, K, gamma, eps):
    return [math.exp(-u * K * 10 / (1 - gamma) - eps) for u in usage]


def reinit(vectors, decays, anchors):
    return [[e * (1 - d) + a * d for e, a in zip(row, arow)]
            for row, d, arow in zip(vectors, decays, anchors)]


def literal_balancing(posteriors):
    total = 0.0
    for f in posteriors:
        K = len(f)
        total += -sum(fk * math.log(1.0 / K) for fk in f)
    return total


def ssim(x, y, c1, c2):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    vx = sum((a - mx) ** 2 for a in x) / n
    vy = sum((b - my) ** 2 for b in y) / n
    cxy = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    return ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))


def ema_kmeans_rvq(batches, codebooks, decay_rate, delta=1e-12):
    """Plain EMA k-means residual quantizer, updated stage by stage.

    ``codebooks`` is a list (stages) of lists of rows; returns the final codebooks.
    """
    books = [[list(r) for r in cb] for cb in codebooks]
    sizes = [[0.0] * len(cb) for cb in books]
    sums = [[[0.0] * len(cb[0]) for _ in cb] for cb in books]
    for batch in batches:
        residual = [list(r) for r in batch]
        for m, cb in enumerate(books):
            K, N = len(cb), len(cb[0])
            idx = [nearest(r, cb) for r in residual]
            outs = [list(cb[i]) for i in idx]
            counts = [0] * K
            bsum = [[0.0] * N for _ in range(K)]
            for r, i in zip(residual, idx):
                counts[i] += 1
                for j in range(N):
                    bsum[i][j] += r[j]
            for k in range(K):
                sizes[m][k] = decay_rate * sizes[m][k] + (1 - decay_rate) * counts[k]
                for j in range(N):
                    sums[m][k][j] = decay_rate * sums[m][k][j] + (1 - decay_rate) * bsum[k][j]
                if counts[k] > 0:
                    cb[k] = [sums[m][k][j] / (sizes[m][k] + delta) for j in range(N)]
            residual = [[a - b for a, b in zip(r, o)] for r, o in zip(residual, outs)]
    return books
