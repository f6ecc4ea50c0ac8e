"""Desk-scale training: affine encoder -> RVQ stack -> affine decoder.

Gradients are derived by hand. The quantizer is differentiated with the
straight-through rule: every stage output, and the summed output, moves
one-for-one with the encoder features, and each stage input is the features
minus constant earlier-stage outputs. The code-balancing gradient uses soft
assignments (softmax over negative distances) in place of the one-hot rows.

:class:`Surrogate` freezes the non-differentiable parts of one forward pass
so that :func:`loss_terms` is a smooth function of the parameters whose
exact gradient is the straight-through gradient; :func:`grad_check` compares
it with central finite differences.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Iterator

import numpy as np

from . import diagnostics, losses
from .data_io import MixtureSpec, sample_mixture
from .errors import InputError, NumericalError
from .losses import BalancingMode, LossBreakdown, LossWeights, SsimParams
from .numerics import Rng, as_matrix, pairwise_sq_dist
from .online_clustering import AnchorPolicy
from .rvq import InitMode, RvqStack, ensure_initialized, rvq_quantize, train_step

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 256
    learning_rate: float = 1e-2
    alpha: float = 0.1
    beta: float = 0.01
    commitment_weight: float = 0.25
    gamma: float = 0.999
    epsilon: float = 1e-3
    seed: int = 0
    anchor_policy: str = "probabilistic"
    balancing_mode: str = "reverse"
    init_mode: str = "data_draw"
    ervq_enabled: bool = True
    input_dim: int = 8
    code_dim: int = 8
    num_stages: int = 2
    codebook_size: int = 64
    ema_decay: float = 0.99
    soft_temperature: float = 1.0
    literal_paper_softmax: bool = False
    ssim_c1: float = 1e-4
    ssim_c2: float = 9e-4
    eval_size: int = 4096
    clusters: int = 64
    cluster_spread: float = 1.0
    cluster_scale: float = 0.05
    mixture: dict | None = None

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise InputError("steps and batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise InputError("learning_rate must be > 0")
        for name in ("alpha", "beta", "commitment_weight"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise InputError(f"{name} must be finite and >= 0")
        if not 0 < self.gamma < 1 or not 0 < self.ema_decay < 1:
            raise InputError("gamma and ema_decay must lie in (0, 1)")
        if self.epsilon < 0:
            raise InputError("epsilon must be >= 0")
        if min(self.input_dim, self.code_dim, self.num_stages, self.codebook_size, self.clusters) < 1:
            raise InputError("dimensions and counts must be >= 1")
        if not self.soft_temperature > 0:
            raise InputError("soft_temperature must be > 0")
        AnchorPolicy(self.anchor_policy)
        BalancingMode(self.balancing_mode)
        InitMode(self.init_mode)

    @property
    def weights(self) -> LossWeights:
        if not self.ervq_enabled:
            return LossWeights(0.0, 0.0, self.commitment_weight)
        return LossWeights(self.alpha, self.beta, self.commitment_weight)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["schema_version"] = SCHEMA_VERSION
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainConfig":
        if not isinstance(doc, dict):
            raise InputError("config must be a JSON object")
        doc = dict(doc)
        version = doc.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise InputError(f"schema_version: unsupported value {version!r} (expected {SCHEMA_VERSION})")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(doc) - set(known))
        if unknown:
            raise InputError(f"{unknown[0]}: unknown config field")
        for name, value in doc.items():
            ftype = known[name].type
            ok = {
                "int": isinstance(value, int) and not isinstance(value, bool),
                "float": isinstance(value, (int, float)) and not isinstance(value, bool),
                "str": isinstance(value, str),
                "bool": isinstance(value, bool),
                "dict | None": value is None or isinstance(value, dict),
            }.get(ftype, True)
            if not ok:
                raise InputError(f"{name}: expected {ftype}, got {type(value).__name__}")
        try:
            return cls(**doc)
        except ValueError as exc:
            if isinstance(exc, InputError):
                raise
            raise InputError(str(exc)) from exc

    def mixture_spec(self) -> MixtureSpec:
        if self.mixture is not None:
            return MixtureSpec.from_dict(self.mixture)
        return MixtureSpec.random(self.clusters, self.input_dim, Rng(self.seed).spawn(1),
                                  spread=self.cluster_spread, scale=self.cluster_scale)

    def make_stack(self) -> RvqStack:
        return RvqStack.create(
            self.num_stages, self.codebook_size, self.code_dim, gamma=self.gamma, epsilon=self.epsilon,
            anchor_policy=self.anchor_policy, weights=self.weights, ema_decay=self.ema_decay,
            online_clustering=self.ervq_enabled, balancing_mode=self.balancing_mode,
            ssim_params=SsimParams(self.ssim_c1, self.ssim_c2),
            literal_paper_softmax=self.literal_paper_softmax, init_mode=self.init_mode)


@dataclass
class ToyModel:
    enc_w: np.ndarray   # (F, N)
    enc_b: np.ndarray   # (N,)
    dec_w: np.ndarray   # (N, F)
    dec_b: np.ndarray   # (F,)
    stack: RvqStack

    def __post_init__(self):
        F, N = self.enc_w.shape
        if self.dec_w.shape != (N, F) or self.enc_b.shape != (N,) or self.dec_b.shape != (F,):
            raise InputError("encoder/decoder shapes are inconsistent")
        if self.stack.N != N:
            raise InputError(f"encoder output dim {N} != stack dim {self.stack.N}")

    @classmethod
    def create(cls, cfg: TrainConfig, rng: Rng | None = None) -> "ToyModel":
        """Random semi-orthogonal encoder; decoder starts as its pseudo-inverse."""
        rng = rng or Rng(cfg.seed).spawn(2)
        F, N = cfg.input_dim, cfg.code_dim
        a = rng.normal((max(F, N), min(F, N)))
        q, r = np.linalg.qr(a)
        q = q * np.sign(np.diag(r))
        enc_w = q if F >= N else q.T
        return cls(enc_w, np.zeros(N), np.linalg.pinv(enc_w), np.zeros(F), cfg.make_stack())

    @property
    def params(self) -> list:
        return [self.enc_w, self.enc_b, self.dec_w, self.dec_b]

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def encode(self, x) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) @ self.enc_w + self.enc_b

    def decode(self, summed) -> np.ndarray:
        return summed @ self.dec_w + self.dec_b

    def to_dict(self) -> dict:
        return {"enc_w": self.enc_w.tolist(), "enc_b": self.enc_b.tolist(),
                "dec_w": self.dec_w.tolist(), "dec_b": self.dec_b.tolist()}

    def checkpoint(self, cfg: TrainConfig | None = None) -> dict:
        doc = self.stack.to_dict()
        doc["model"] = self.to_dict()
        if cfg is not None:
            doc["config"] = cfg.to_dict()
        return doc

    @classmethod
    def from_checkpoint(cls, doc: dict) -> "ToyModel":
        m = doc["model"]
        return cls(np.asarray(m["enc_w"], dtype=np.float64), np.asarray(m["enc_b"], dtype=np.float64),
                   np.asarray(m["dec_w"], dtype=np.float64), np.asarray(m["dec_b"], dtype=np.float64),
                   RvqStack.from_dict(doc))


# --- differentiable surrogate --------------------------------------------

@dataclass
class Surrogate:
    """Everything held constant while differentiating one batch."""

    x: np.ndarray
    z0: np.ndarray
    summed0: np.ndarray
    stage_outputs0: list
    stage_inputs0: list
    codebooks: list
    weights: LossWeights
    ssim_params: SsimParams = field(default_factory=SsimParams)
    balancing_mode: BalancingMode = BalancingMode.REVERSE
    temperature: float = 1.0

    @classmethod
    def from_result(cls, x, z, result, codebooks, stack: RvqStack, temperature: float = 1.0):
        return cls(x, z, result.summed, result.stage_outputs, result.stage_inputs, codebooks,
                   stack.weights, stack.ssim_params, stack.balancing_mode, temperature)


TERMS = ("reconstruction", "commitment", "balancing", "ssim")


def loss_terms(params, s: Surrogate, grad: bool = True):
    """Unweighted loss terms and, optionally, their gradients w.r.t. ``params``.

    ``params`` is ``[enc_w, enc_b, dec_w, dec_b]``. Returns ``(values, grads)``
    where ``grads[term]`` is a list shaped like ``params``.
    """
    enc_w, enc_b, dec_w, dec_b = params
    x = s.x
    L, F = x.shape
    z = x @ enc_w + enc_b
    delta = z - s.z0
    summed = s.summed0 + delta
    outs = [o + delta for o in s.stage_outputs0]
    ins = [r + delta for r in s.stage_inputs0]
    xhat = summed @ dec_w + dec_b

    err = xhat - x
    values = {
        "reconstruction": float(np.mean(err * err)),
        "commitment": float(np.mean(np.sum((z - s.summed0) ** 2, axis=1))),
    }
    bal, bal_grads = losses.soft_balancing_loss(ins, s.codebooks, s.balancing_mode, s.temperature)
    values["balancing"] = bal
    values["ssim"] = losses.inter_codebook_ssim_loss(outs, s.ssim_params)
    if not grad:
        return values, None

    def through_encoder(g_z):
        return [x.T @ g_z, g_z.sum(axis=0), np.zeros_like(dec_w), np.zeros_like(dec_b)]

    g_xhat = 2.0 * err / (L * F)
    g_z_rec = g_xhat @ dec_w.T
    rec = through_encoder(g_z_rec)
    rec[2] = summed.T @ g_xhat
    rec[3] = g_xhat.sum(axis=0)
    grads = {
        "reconstruction": rec,
        "commitment": through_encoder(2.0 * (z - s.summed0) / L),
        "balancing": through_encoder(sum(bal_grads)),
        "ssim": through_encoder(sum(losses.inter_codebook_ssim_grad(outs, s.ssim_params))),
    }
    return values, grads


def combined_grads(grads: dict, w: LossWeights) -> list:
    scale = {"reconstruction": 1.0, "commitment": w.commitment_weight, "balancing": w.alpha, "ssim": w.beta}
    out = [np.zeros_like(g) for g in grads["reconstruction"]]
    for term, gs in grads.items():
        if scale[term]:
            for o, g in zip(out, gs):
                o += scale[term] * g
    return out


# --- training -------------------------------------------------------------

def mixture_stream(spec: MixtureSpec, batch_size: int, rng: Rng) -> Iterator[np.ndarray]:
    while True:
        yield sample_mixture(spec, batch_size, rng)


def fit(model: ToyModel, data_stream, cfg: TrainConfig, rng: Rng | None = None,
        on_step: Callable[[int, LossBreakdown], None] | None = None) -> list[LossBreakdown]:
    """Train ``model`` in place; returns one :class:`LossBreakdown` per step.

    ``data_stream`` yields ``(batch, F)`` arrays; the reconstruction target is
    the batch itself.
    """
    rng = rng or Rng(cfg.seed).spawn(3)
    history = []
    for step in range(cfg.steps):
        x = as_matrix(next(data_stream), "batch", cols=model.enc_w.shape[0])
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                br, g = _step(model, x, cfg, rng)
        except InputError as exc:
            # batch shape was checked above, so anything rejected here is overflow
            br, g = LossBreakdown(total=math.nan), None
            log.debug("step %d rejected non-finite intermediate: %s", step, exc)
        if g is None or not (math.isfinite(br.total) and all(np.all(np.isfinite(gi)) for gi in g)):
            raise NumericalError(f"non-finite loss at step {step}: {br}",
                                 state={"step": step, "checkpoint": _safe_checkpoint(model)})
        for p, gi in zip(model.params, g):
            p -= cfg.learning_rate * gi
        history.append(br)
        if on_step is not None:
            on_step(step, br)
    return history


def _step(model: ToyModel, x: np.ndarray, cfg: TrainConfig, rng: Rng):
    stack = model.stack
    w = stack.weights
    z = model.encode(x)
    ensure_initialized(z, stack, rng)
    codebooks = [cb.vectors.copy() for cb in stack.codebooks]
    result, br = train_step(z, stack, rng)

    s = Surrogate.from_result(x, z, result, codebooks, stack, cfg.soft_temperature)
    values, grads = loss_terms(model.params, s)
    br.codec_loss = values["reconstruction"]
    br.total = losses.total_loss(br.codec_loss + w.commitment_weight * br.commitment, br.balancing, br.ssim, w)
    return br, combined_grads(grads, w)


def _safe_checkpoint(model: ToyModel) -> dict:
    # json cannot encode NaN/Inf as standard tokens; stringify them for the dump
    def clean(v):
        if isinstance(v, float) and not math.isfinite(v):
            return repr(v)
        if isinstance(v, list):
            return [clean(u) for u in v]
        if isinstance(v, dict):
            return {k: clean(u) for k, u in v.items()}
        return v
    return clean(model.checkpoint())


def log_csv(history: list[LossBreakdown]) -> str:
    lines = [",".join(LossBreakdown.CSV_HEADER)]
    lines += [br.csv_row(i) for i, br in enumerate(history)]
    return "\n".join(lines) + "\n"


def evaluate(model: ToyModel, x) -> dict:
    """Codebook statistics and reconstruction MSE over one evaluation pass."""
    x = as_matrix(x, "eval batch")
    res = rvq_quantize(model.encode(x), model.stack)
    counts = [np.bincount(res.indices[:, m], minlength=cb.K) for m, cb in enumerate(model.stack.codebooks)]
    rep = diagnostics.report(counts)
    rep["mse"] = float(np.mean((model.decode(res.summed) - x) ** 2))
    rep["mean_adjacent_ssim"] = (losses.inter_codebook_ssim_loss(res.stage_outputs) / (model.stack.M - 1)
                                 if model.stack.M > 1 else 0.0)
    return rep


def run(cfg: TrainConfig, spec: MixtureSpec | None = None):
    """Build a model, train it on the configured mixture, evaluate it.

    Returns ``(model, history, eval_report)``.
    """
    spec = spec or cfg.mixture_spec()
    if spec.dim != cfg.input_dim:
        raise InputError(f"mixture dim {spec.dim} != input_dim {cfg.input_dim}")
    root = Rng(cfg.seed)
    model = ToyModel.create(cfg, root.spawn(2))
    history = fit(model, mixture_stream(spec, cfg.batch_size, root.spawn(4)), cfg, root.spawn(3))
    x_eval = sample_mixture(spec, cfg.eval_size, root.spawn(5))
    return model, history, evaluate(model, x_eval)


# --- gradient check -------------------------------------------------------

def decision_margins(stage_inputs, codebooks) -> np.ndarray:
    """Per-row smallest gap between best and second-best distance over all stages."""
    margin = np.full(stage_inputs[0].shape[0], np.inf)
    for r, e in zip(stage_inputs, codebooks):
        if e.shape[0] < 2:
            continue
        d = np.sort(pairwise_sq_dist(r, e), axis=1)
        margin = np.minimum(margin, d[:, 1] - d[:, 0])
    return margin


def _relative_error(a: np.ndarray, n: np.ndarray, floor: float) -> float:
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def grad_check(model: ToyModel, batch, h: float = 1e-5, boundary: float = 1e-6,
               floor: float = 1e-8, temperature: float = 1.0) -> dict:
    """Max relative error between analytic and central-difference gradients, per term.

    Rows within ``boundary`` of a quantization decision boundary are dropped
    first. Entries where both gradients are below ``floor`` in magnitude are
    compared in absolute terms.
    """
    if model.num_params > 64:
        raise InputError(f"grad_check is meant for <= 64 parameters, model has {model.num_params}")
    x = as_matrix(batch, "batch", cols=model.enc_w.shape[0])
    z = model.encode(x)
    res = rvq_quantize(z, model.stack)
    codebooks = [cb.vectors.copy() for cb in model.stack.codebooks]
    keep = decision_margins(res.stage_inputs, codebooks) >= boundary
    x, z = x[keep], z[keep]
    res = rvq_quantize(z, model.stack)
    s = Surrogate.from_result(x, z, res, codebooks, model.stack, temperature)

    params = [p.copy() for p in model.params]
    _, analytic = loss_terms(params, s)
    numeric = {t: [np.zeros_like(p) for p in params] for t in TERMS}
    for pi, p in enumerate(params):
        for j in np.ndindex(p.shape):
            orig = p[j]
            p[j] = orig + h
            up, _ = loss_terms(params, s, grad=False)
            p[j] = orig - h
            down, _ = loss_terms(params, s, grad=False)
            p[j] = orig
            for t in TERMS:
                numeric[t][pi][j] = (up[t] - down[t]) / (2 * h)

    out = {}
    for t in TERMS:
        a = np.concatenate([g.ravel() for g in analytic[t]])
        n = np.concatenate([g.ravel() for g in numeric[t]])
        out[t] = _relative_error(a, n, floor)
    out["rows_used"] = int(keep.sum())
    return out


def ssim_grad_check(stage_outputs, p: SsimParams = SsimParams(), h: float = 1e-5, floor: float = 1e-8) -> float:
    """Finite-difference check of the inter-codebook SSIM gradient w.r.t. the stage outputs."""
    outs = [np.array(o, dtype=np.float64) for o in stage_outputs]
    analytic = losses.inter_codebook_ssim_grad(outs, p)
    worst = 0.0
    for m, o in enumerate(outs):
        numeric = np.zeros_like(o)
        for j in np.ndindex(o.shape):
            orig = o[j]
            o[j] = orig + h
            up = losses.inter_codebook_ssim_loss(outs, p)
            o[j] = orig - h
            down = losses.inter_codebook_ssim_loss(outs, p)
            o[j] = orig
            numeric[j] = (up - down) / (2 * h)
        worst = max(worst, _relative_error(analytic[m], numeric, floor))
    return worst


def small_model(seed: int = 0, input_dim: int = 4, code_dim: int = 3, num_stages: int = 2,
                codebook_size: int = 4) -> tuple[ToyModel, np.ndarray]:
    """A <= 64-parameter model with data-initialized codebooks plus a batch for :func:`grad_check`."""
    cfg = TrainConfig(steps=1, batch_size=16, input_dim=input_dim, code_dim=code_dim,
                      num_stages=num_stages, codebook_size=codebook_size, seed=seed)
    rng = Rng(seed)
    model = ToyModel.create(cfg, rng.spawn(2))
    model.enc_b[:] = 0.1 * rng.normal(code_dim)
    model.dec_w += 0.1 * rng.normal(model.dec_w.shape)
    model.dec_b[:] = 0.1 * rng.normal(input_dim)
    ensure_initialized(model.encode(rng.normal((64, input_dim))), model.stack, rng)
    x = rng.normal((16, input_dim))
    return model, x


# --- collapse experiment --------------------------------------------------

def canonical_collapse_config(seed: int = 0, **overrides) -> TrainConfig:
    """64-cluster mixture, K=64, pathological (all-equal) codebook init.

    A single stage and ``gamma=0.99`` so that the usage window (about 100
    batches) is short relative to the 1500 training steps.
    """
    base = dict(seed=seed, steps=1500, batch_size=256, input_dim=8, code_dim=8, num_stages=1,
                codebook_size=64, clusters=64, gamma=0.99, init_mode="pathological", eval_size=8192)
    base.update(overrides)
    return TrainConfig(**base)


def collapse_experiment(baseline: TrainConfig, ervq: TrainConfig) -> dict:
    """Train a plain-RVQ arm and an ERVQ arm on identical data and compare codebook health."""
    if baseline.seed != ervq.seed or baseline.mixture_spec().to_dict() != ervq.mixture_spec().to_dict():
        raise InputError("both arms must share seed and data")
    spec = baseline.mixture_spec()
    arms = {}
    for name, cfg in (("baseline", baseline), ("ervq", ervq)):
        model, history, rep = run(cfg, spec)
        rep["final_loss"] = history[-1].total
        arms[name] = rep
    return arms


def collapse_summary(arms: dict) -> str:
    lines = ["arm       stage  utilization  perplexity", "-" * 42]
    for name, rep in arms.items():
        for m, s in enumerate(rep["per_stage"]):
            lines.append(f"{name:<9} {m:>5}  {s['utilization']:>11.3f}  {s['perplexity']:>10.2f}")
    lines.append("")
    for name, rep in arms.items():
        lines.append(f"{name:<9} bitrate efficiency {rep['bitrate_efficiency']:.3f}  mse {rep['mse']:.3e}")
    return "\n".join(lines) + "\n"
