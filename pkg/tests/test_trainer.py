import itertools
import json
import math

import numpy as np
import pytest

from ervq import trainer
from ervq.errors import InputError, NumericalError
from ervq.numerics import Rng


def small_cfg(**kw):
    base = dict(steps=30, batch_size=32, input_dim=4, code_dim=3, num_stages=2, codebook_size=8,
                clusters=8, eval_size=256, seed=7)
    base.update(kw)
    return trainer.TrainConfig(**base)


def test_run_is_deterministic():
    cfg = small_cfg()
    m1, h1, r1 = trainer.run(cfg)
    m2, h2, r2 = trainer.run(cfg)
    assert trainer.log_csv(h1) == trainer.log_csv(h2)
    assert json.dumps(m1.checkpoint(cfg)) == json.dumps(m2.checkpoint(cfg))
    assert r1 == r2
    _, h3, _ = trainer.run(small_cfg(seed=8))
    assert trainer.log_csv(h3) != trainer.log_csv(h1)


def test_baseline_arm_has_no_ervq_terms():
    cfg = small_cfg(ervq_enabled=False)
    assert (cfg.weights.alpha, cfg.weights.beta) == (0.0, 0.0)
    model = trainer.ToyModel.create(cfg)
    assert model.stack.online_clustering is False
    _, h, _ = trainer.run(cfg)
    for br in h:
        assert br.total == pytest.approx(br.codec_loss + 0.25 * br.commitment, rel=1e-15)


def test_memorizes_few_points_from_collapsed_init():
    pts = Rng(0).normal((12, 4))
    cfg = trainer.TrainConfig(steps=1000, batch_size=12, input_dim=4, code_dim=4, num_stages=1,
                              codebook_size=16, learning_rate=0.05, gamma=0.9, init_mode="pathological")
    model = trainer.ToyModel.create(cfg)
    trainer.fit(model, itertools.repeat(pts), cfg)
    assert trainer.evaluate(model, pts)["mse"] < 1e-3


def test_non_finite_loss_aborts_with_state():
    cfg = small_cfg(learning_rate=1e6, steps=200)
    with pytest.raises(NumericalError) as info:
        trainer.run(cfg)
    state = info.value.state
    assert isinstance(state["step"], int)
    json.dumps(state)  # the dump must be serializable
    assert "model" in state["checkpoint"]


def test_config_round_trip_and_validation():
    cfg = small_cfg(anchor_policy="closest")
    doc = json.loads(json.dumps(cfg.to_dict()))
    assert doc["schema_version"] == trainer.SCHEMA_VERSION
    assert trainer.TrainConfig.from_dict(doc) == cfg
    with pytest.raises(InputError, match="steps"):
        trainer.TrainConfig.from_dict({"steps": "ten"})
    with pytest.raises(InputError, match="bogus"):
        trainer.TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(InputError, match="schema_version"):
        trainer.TrainConfig.from_dict({"schema_version": 99})
    with pytest.raises(InputError):
        trainer.TrainConfig(steps=0)
    with pytest.raises(ValueError):
        trainer.TrainConfig(anchor_policy="nearest")


def test_checkpoint_restores_model():
    cfg = small_cfg()
    model, _, _ = trainer.run(cfg)
    back = trainer.ToyModel.from_checkpoint(json.loads(json.dumps(model.checkpoint(cfg))))
    x = Rng(1).normal((10, 4))
    assert back.encode(x).tobytes() == model.encode(x).tobytes()
    assert back.stack.to_dict() == model.stack.to_dict()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_term_lowers_adjacent_similarity(seed):
    common = dict(seed=seed, steps=500, batch_size=128, num_stages=2, codebook_size=16, eval_size=2048)
    with_beta = trainer.run(trainer.TrainConfig(beta=0.01, **common))[2]["mean_adjacent_ssim"]
    without = trainer.run(trainer.TrainConfig(beta=0.0, **common))[2]["mean_adjacent_ssim"]
    assert with_beta < without


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_collapse_ervq_never_hurts_mse(seed):
    base = trainer.canonical_collapse_config(seed, ervq_enabled=False)
    arms = trainer.collapse_experiment(base, trainer.canonical_collapse_config(seed))
    assert arms["ervq"]["mse"] <= arms["baseline"]["mse"] + 1e-6
    assert arms["ervq"]["per_stage"][0]["utilization"] >= arms["baseline"]["per_stage"][0]["utilization"]
    for b, e in zip(arms["baseline"]["per_stage"], arms["ervq"]["per_stage"]):
        assert e["perplexity"] > b["perplexity"]


def test_collapse_requires_shared_seed():
    with pytest.raises(InputError):
        trainer.collapse_experiment(trainer.canonical_collapse_config(0, ervq_enabled=False),
                                    trainer.canonical_collapse_config(1))


def test_collapse_summary_format():
    rep = {"per_stage": [{"utilization": 0.5, "perplexity": 3.0, "total": 4}],
           "bitrate_efficiency": 0.25, "mse": 0.1}
    text = trainer.collapse_summary({"baseline": rep, "ervq": rep})
    assert "baseline" in text and "bitrate efficiency 0.250" in text
    assert not math.isnan(rep["mse"])
