"""Hand-written gradients against central finite differences."""

import numpy as np
import pytest

from ervq import trainer
from ervq.losses import LossWeights, SsimParams
from ervq.numerics import Rng


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_all_terms_match_finite_differences(seed):
    model, x = trainer.small_model(seed)
    assert model.num_params <= 64
    errs = trainer.grad_check(model, x)
    assert errs["rows_used"] >= 12
    for t in trainer.TERMS:
        assert errs[t] < 1e-4, (t, errs[t])


def test_reconstruction_only_is_tight():
    model, x = trainer.small_model(3)
    model.stack.weights = LossWeights(0.0, 0.0, 0.0)
    assert trainer.grad_check(model, x)["reconstruction"] < 1e-6


def test_literal_balancing_gradient_is_zero():
    # the literal value is constant, so both gradients vanish; compare absolutely
    model, x = trainer.small_model(4)
    model.stack.balancing_mode = "literal"
    z = model.encode(x)
    s = trainer.Surrogate.from_result(x, z, trainer.rvq_quantize(z, model.stack),
                                      [cb.vectors.copy() for cb in model.stack.codebooks], model.stack)
    _, grads = trainer.loss_terms(model.params, s)
    assert max(np.max(np.abs(g)) for g in grads["balancing"]) < 1e-12
    params = [p.copy() for p in model.params]
    base, _ = trainer.loss_terms(params, s, grad=False)
    params[0][0, 0] += 1e-5
    moved, _ = trainer.loss_terms(params, s, grad=False)
    assert abs(moved["balancing"] - base["balancing"]) < 1e-14


def test_zero_batch_gives_finite_gradients():
    model, x = trainer.small_model(5)
    z = model.encode(np.zeros_like(x))
    s = trainer.Surrogate.from_result(np.zeros_like(x), z, trainer.rvq_quantize(z, model.stack),
                                      [cb.vectors.copy() for cb in model.stack.codebooks], model.stack)
    values, grads = trainer.loss_terms(model.params, s)
    assert all(np.isfinite(v) for v in values.values())
    for gs in grads.values():
        assert all(np.all(np.isfinite(g)) for g in gs)


def test_ssim_gradient_wrt_stage_outputs():
    rng = Rng(6)
    outs = [rng.normal((5, 4)) for _ in range(3)]
    assert trainer.ssim_grad_check(outs) < 1e-4
    assert trainer.ssim_grad_check(outs, SsimParams(1e-2, 1e-2)) < 1e-4


def test_grad_check_rejects_large_model():
    cfg = trainer.TrainConfig(input_dim=8, code_dim=8, num_stages=1, codebook_size=4)
    model = trainer.ToyModel.create(cfg)
    with pytest.raises(trainer.InputError):
        trainer.grad_check(model, np.zeros((4, 8)))
