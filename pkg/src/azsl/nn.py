"""Dense-network numerics: layer specs, MLP forward/backward, losses, Adam.

Everything runs in float64 numpy. Networks are plain parameter containers so
training loops stay explicit, seedable, and bit-reproducible; there is no
autograd graph, just hand-written backward passes verified against finite
differences (see grad_check).
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

ROLE_TEACHER = "teacher"
ROLE_STUDENT = "student"
ROLE_GENERATOR = "generator"
ROLE_CLASSIFIER = "classifier"
ROLES = (ROLE_TEACHER, ROLE_STUDENT, ROLE_GENERATOR, ROLE_CLASSIFIER)

ACT_LEAKY_RELU = "leaky_relu"
ACT_RELU = "relu"
ACT_IDENTITY = "identity"
ACTIVATIONS = (ACT_LEAKY_RELU, ACT_RELU, ACT_IDENTITY)


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: in_dim -> out_dim followed by an elementwise activation."""

    in_dim: int
    out_dim: int
    activation: str = ACT_IDENTITY
    slope: float = 0.2

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError(f"layer dims must be >= 1, got {self.in_dim}x{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not 0.0 < self.slope < 1.0:
            raise ValueError(f"slope must be in (0, 1), got {self.slope}")


@dataclass
class MlpParams:
    """Weights/biases of a role-tagged MLP. weights[i] is (in_dim, out_dim)."""

    role: str
    layers: list[LayerSpec]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    seed: int

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        _check_chain(self.layers)
        if len(self.weights) != len(self.layers) or len(self.biases) != len(self.layers):
            raise ValueError("one weight/bias pair per layer required")
        for spec, w, b in zip(self.layers, self.weights, self.biases):
            if w.shape != (spec.in_dim, spec.out_dim):
                raise ValueError(f"weight shape {w.shape} != spec {(spec.in_dim, spec.out_dim)}")
            if b.shape != (spec.out_dim,):
                raise ValueError(f"bias shape {b.shape} != ({spec.out_dim},)")

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "MlpParams":
        return MlpParams(
            role=self.role,
            layers=list(self.layers),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            seed=self.seed,
        )


@dataclass
class MlpGrads:
    """Parameter gradients, shaped exactly like the MlpParams they belong to."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "MlpGrads":
        return cls(
            weights=[np.zeros_like(w) for w in params.weights],
            biases=[np.zeros_like(b) for b in params.biases],
        )


@dataclass
class ForwardCache:
    """Per-layer inputs and pre-activations kept for the backward pass."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    spec_sig: tuple


def _check_chain(layers: list[LayerSpec]) -> None:
    if not layers:
        raise ValueError("at least one layer required")
    for a, b in zip(layers, layers[1:]):
        if a.out_dim != b.in_dim:
            raise ValueError(f"layer chain broken: {a.out_dim} -> {b.in_dim}")


def _spec_sig(params: MlpParams) -> tuple:
    return tuple((s.in_dim, s.out_dim, s.activation, s.slope) for s in params.layers)


def _as_batch(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D batch, got shape {x.shape}")
    return x


def mlp_init(specs: list[LayerSpec], role: str, seed: int) -> MlpParams:
    """Scaled-uniform init: W ~ U(+-sqrt(6/(in+out))), zero biases, seeded."""
    _check_chain(specs)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for spec in specs:
        bound = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        weights.append(rng.uniform(-bound, bound, size=(spec.in_dim, spec.out_dim)))
        biases.append(np.zeros(spec.out_dim))
    return MlpParams(role=role, layers=list(specs), weights=weights, biases=biases, seed=seed)


def _activate(z: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if spec.activation == ACT_LEAKY_RELU:
        return np.where(z > 0.0, z, spec.slope * z)
    if spec.activation == ACT_RELU:
        return np.maximum(z, 0.0)
    return z


def _activate_grad(z: np.ndarray, spec: LayerSpec) -> np.ndarray:
    if spec.activation == ACT_LEAKY_RELU:
        return np.where(z > 0.0, 1.0, spec.slope)
    if spec.activation == ACT_RELU:
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


def mlp_forward(params: MlpParams, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run the batch through the net; the cache feeds mlp_backward."""
    x = _as_batch(batch)
    if x.shape[1] != params.in_dim:
        raise ValueError(f"batch has {x.shape[1]} cols, net expects {params.in_dim}")
    inputs, preacts = [], []
    for spec, w, b in zip(params.layers, params.weights, params.biases):
        inputs.append(x)
        z = x @ w + b
        preacts.append(z)
        x = _activate(z, spec)
    return x, ForwardCache(inputs=inputs, preacts=preacts, spec_sig=_spec_sig(params))


def mlp_backward(
    params: MlpParams, cache: ForwardCache, upstream_grad: np.ndarray
) -> tuple[MlpGrads, np.ndarray]:
    """Backprop upstream_grad (dL/d output) to parameter grads and dL/d input."""
    if cache.spec_sig != _spec_sig(params):
        raise ValueError("cache does not match these params (stale or from another net)")
    g = _as_batch(upstream_grad)
    if g.shape != (cache.inputs[0].shape[0], params.out_dim):
        raise ValueError(f"upstream grad shape {g.shape} does not match forward output")
    grads = MlpGrads.zeros_like(params)
    for i in range(len(params.layers) - 1, -1, -1):
        spec = params.layers[i]
        gz = g * _activate_grad(cache.preacts[i], spec)
        grads.weights[i] = cache.inputs[i].T @ gz
        grads.biases[i] = gz.sum(axis=0)
        g = gz @ params.weights[i].T
    return grads, g


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise stable softmax (max-shifted)."""
    z = _as_batch(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_vjp(probs: np.ndarray, grad_probs: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. softmax outputs back to the logits."""
    p = _as_batch(probs)
    g = _as_batch(grad_probs)
    inner = (p * g).sum(axis=1, keepdims=True)
    return p * (g - inner)


def loss_ce(probs: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of softmax probs; gradient is w.r.t. the logits."""
    p = _as_batch(probs)
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (p.shape[0],):
        raise ValueError(f"{p.shape[0]} rows but {y.shape} labels")
    if y.size and (y.min() < 0 or y.max() >= p.shape[1]):
        raise ValueError("label out of range")
    n = p.shape[0]
    value = float(-np.log(p[np.arange(n), y]).mean())
    grad = p.copy()
    grad[np.arange(n), y] -= 1.0
    return value, grad / n


def loss_mse(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared elementwise difference and its gradient w.r.t. pred."""
    a = _as_batch(pred)
    b = _as_batch(target)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    diff = a - b
    return float((diff * diff).mean()), 2.0 * diff / diff.size


@dataclass
class AdamState:
    """Adam moment accumulators; shapes mirror the params they update."""

    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, lr: float = 1e-5, **kw) -> "AdamState":
        return cls(
            lr=lr,
            m_w=[np.zeros_like(w) for w in params.weights],
            v_w=[np.zeros_like(w) for w in params.weights],
            m_b=[np.zeros_like(b) for b in params.biases],
            v_b=[np.zeros_like(b) for b in params.biases],
            **kw,
        )


def adam_step(params: MlpParams, grads: MlpGrads, state: AdamState) -> tuple[MlpParams, AdamState]:
    """Standard bias-corrected Adam update, applied in place."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for arrs, garrs, ms, vs in (
        (params.weights, grads.weights, state.m_w, state.v_w),
        (params.biases, grads.biases, state.m_b, state.v_b),
    ):
        for a, g, m, v in zip(arrs, garrs, ms, vs):
            if a.shape != g.shape:
                raise ValueError(f"grad shape {g.shape} does not match param {a.shape}")
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * g * g
            a -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


LossClosure = Callable[[MlpParams], tuple[float, MlpGrads]]


def flatten_grads(grads: MlpGrads) -> np.ndarray:
    parts = [g.ravel() for g in grads.weights] + [g.ravel() for g in grads.biases]
    return np.concatenate(parts)


def _param_views(params: MlpParams) -> list[np.ndarray]:
    return list(params.weights) + list(params.biases)


def grad_check(
    params: MlpParams,
    loss_closure: LossClosure,
    epsilon: float = 1e-5,
    n_samples: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic grads and central finite differences.

    Samples n_samples coordinates (or all of them when the net is smaller).
    loss_closure must be deterministic in params.
    """
    _, analytic = loss_closure(params)
    flat_analytic = flatten_grads(analytic)
    total = flat_analytic.size
    rng = np.random.default_rng(seed)
    idx = np.arange(total) if total <= n_samples else rng.choice(total, size=n_samples, replace=False)

    work = params.copy()
    views = _param_views(work)
    sizes = [v.size for v in views]
    offsets = np.cumsum([0] + sizes)

    worst = 0.0
    for flat_i in idx:
        k = int(np.searchsorted(offsets, flat_i, side="right") - 1)
        local = int(flat_i - offsets[k])
        view = views[k].reshape(-1)
        orig = view[local]
        view[local] = orig + epsilon
        hi, _ = loss_closure(work)
        view[local] = orig - epsilon
        lo, _ = loss_closure(work)
        view[local] = orig
        numeric = (hi - lo) / (2.0 * epsilon)
        a = flat_analytic[flat_i]
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        worst = max(worst, err)
    return worst


def params_allclose(a: MlpParams, b: MlpParams, rtol: float = 0.0, atol: float = 0.0) -> bool:
    if _spec_sig(a) != _spec_sig(b):
        return False
    return all(
        np.allclose(x, y, rtol=rtol, atol=atol)
        for x, y in zip(_param_views(a), _param_views(b))
    )


def deep_copy_params(params: MlpParams) -> MlpParams:
    return copy.deepcopy(params)
