import json
import math

import numpy as np
import pytest

from ervq.errors import InputError
from ervq.losses import LossWeights
from ervq.numerics import Rng
from ervq.online_clustering import UsageTracker
from ervq.rvq import RvqStack, decode, rvq_quantize, train_step
from ervq.vq import Codebook

import oracles


def stack_of(*books, **kw):
    return RvqStack([Codebook(np.asarray(b, dtype=np.float64)) for b in books], **kw)


def dyadic(rng, shape):
    # multiples of 1/64 with small magnitude: every sum and difference below is exact
    return (rng.integers(2049, size=shape) - 1024) / 64.0


def test_two_stage_hand_trace():
    s = stack_of([[0], [4]], [[0], [1]])
    res = rvq_quantize([[4.9]], s)
    assert res.indices.tolist() == [[1, 1]]
    assert res.stage_inputs[1][0, 0] == pytest.approx(0.9, abs=1e-15)
    assert res.summed.tolist() == [[5.0]]
    assert res.final_residual[0, 0] == pytest.approx(-0.1, abs=1e-15)
    assert decode([[1, 1]], s).tolist() == [[5.0]]


def test_exact_hit_single_stage():
    s = stack_of([[1.0, 2.0], [3.0, 4.0]])
    res = rvq_quantize([[3.0, 4.0]], s)
    assert res.summed.tolist() == [[3.0, 4.0]]
    assert res.final_residual.tolist() == [[0.0, 0.0]]


def test_identity_exact_on_dyadic_values():
    rng = Rng(13)
    for _ in range(200):
        M, K, N, L = (int(rng.integers(8)) + 1, int(rng.integers(8)) + 1,
                      int(rng.integers(4)) + 1, int(rng.integers(20)) + 1)
        s = RvqStack([Codebook(dyadic(rng, (K, N))) for _ in range(M)])
        z = dyadic(rng, (L, N))
        res = rvq_quantize(z, s)
        assert np.array_equal(res.summed + res.final_residual, z)
        assert np.array_equal(sum(res.stage_outputs[1:], res.stage_outputs[0]), res.summed)
        assert np.array_equal(decode(res.indices, s), res.summed)


def test_decode_round_trip_on_random_floats():
    rng = Rng(14)
    for _ in range(50):
        M, K, N = int(rng.integers(6)) + 1, int(rng.integers(16)) + 1, int(rng.integers(6)) + 1
        s = RvqStack([Codebook(rng.normal((K, N))) for _ in range(M)])
        res = rvq_quantize(rng.normal((30, N)), s)
        assert decode(res.indices, s).tobytes() == res.summed.tobytes()
        np.testing.assert_allclose(res.summed + res.final_residual, res.stage_inputs[0], atol=1e-12)


def test_decode_zero_and_errors():
    s = stack_of([[0.0, 0.0], [1.0, 1.0]], [[0.0, 0.0]])
    assert decode(np.zeros((3, 2), dtype=int), s).tolist() == [[0.0, 0.0]] * 3
    with pytest.raises(InputError):
        decode([[2, 0]], s)
    with pytest.raises(InputError):
        decode([[0]], s)
    with pytest.raises(InputError):
        rvq_quantize(np.zeros((1, 3)), s)


def test_residual_norms_non_increasing_with_zero_codeword():
    rng = Rng(15)
    for _ in range(50):
        M, K, N = int(rng.integers(6)) + 1, int(rng.integers(8)) + 1, int(rng.integers(5)) + 1
        books = []
        for _ in range(M):
            v = rng.normal((K, N))
            v[rng.integers(K)] = 0.0
            books.append(Codebook(v))
        s = RvqStack(books)
        res = rvq_quantize(rng.normal((20, N)) * 2, s)
        norms = [np.linalg.norm(r, axis=1) for r in res.stage_inputs + [res.final_residual]]
        for a, b in zip(norms, norms[1:]):
            assert np.all(b <= a + 1e-12)


def test_usage_sums_after_one_step():
    rng = Rng(16)
    s = RvqStack.create(3, 8, 2, gamma=0.95)
    train_step(rng.normal((40, 2)), s, rng)
    for tr in s.trackers:
        assert abs(tr.usage.sum() - 0.05) < 1e-12


def test_disabled_extras_reduce_to_commitment():
    rng = Rng(17)
    s = RvqStack.create(2, 4, 3, weights=LossWeights(0.0, 0.0), online_clustering=False)
    _, br = train_step(rng.normal((16, 3)), s, rng)
    assert br.total == 0.25 * br.commitment


@pytest.mark.parametrize("mode", ["flag_off", "decay_zero"])
def test_matches_ema_kmeans_oracle(mode):
    rng = Rng(18)
    K, N, M = 6, 3, 2
    init = [rng.normal((K, N)) for _ in range(M)]
    if mode == "flag_off":
        s = RvqStack([Codebook(v) for v in init], weights=LossWeights(0, 0), online_clustering=False)
    else:
        # epsilon = inf drives every decay coefficient to exactly zero
        s = RvqStack([Codebook(v) for v in init], [UsageTracker(K, 0.99, math.inf) for _ in range(M)],
                     weights=LossWeights(0, 0))
    batches = [rng.normal((12, N)) for _ in range(100)]
    for b in batches:
        train_step(b, s, rng)
    want = oracles.ema_kmeans_rvq([b.tolist() for b in batches], [v.tolist() for v in init], 0.99)
    for cb, w in zip(s.codebooks, want):
        assert np.max(np.abs(cb.vectors - np.asarray(w))) < 1e-9


def test_unused_codeword_migrates_toward_data():
    rng = Rng(19)
    centers = np.array([[1.0, 0.0], [-1.0, 0.0]])
    vectors = np.array([[1.0, 0.0], [-1.0, 0.0], [50.0, 50.0]])
    s = RvqStack([Codebook(vectors)], [UsageTracker(3, 0.99, 1e-3)])

    def gap():
        return np.min(np.linalg.norm(centers - s.codebooks[0].vectors[2], axis=1))

    before = gap()
    res, _ = train_step(centers[rng.integers(2, size=64)] + 0.05 * rng.normal((64, 2)), s, rng)
    assert 2 not in res.indices[:, 0]
    assert abs(s.trackers[0].decay[2] - math.exp(-1e-3)) < 1e-6
    for _ in range(99):
        train_step(centers[rng.integers(2, size=64)] + 0.05 * rng.normal((64, 2)), s, rng)
    assert gap() < before
    assert gap() < 1.0


def test_stack_json_round_trip():
    rng = Rng(20)
    s = RvqStack.create(2, 4, 3, gamma=0.9, anchor_policy="closest", literal_paper_softmax=True)
    for _ in range(3):
        train_step(rng.normal((10, 3)), s, rng)
    doc = json.loads(json.dumps(s.to_dict()))
    assert "usage_tracker" in doc["stages"][0] and "weights" in doc
    back = RvqStack.from_dict(doc)
    assert back.to_dict() == s.to_dict()
    z = rng.normal((7, 3))
    assert rvq_quantize(z, back).summed.tobytes() == rvq_quantize(z, s).summed.tobytes()


def test_stack_validation():
    with pytest.raises(InputError):
        RvqStack([])
    with pytest.raises(InputError):
        stack_of([[0.0]], [[0.0, 0.0]])
    with pytest.raises(InputError):
        RvqStack.from_dict({"stages": [{"K": 1}]})
