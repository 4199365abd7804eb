"""Linear and MLP regressors with hand-written backpropagation and Adam.

All parameters of a model live in one flat ``float64`` vector laid out as
``[W0, b0, W1, b1, ...]`` with each ``W`` stored row-major as
``(fan_in, fan_out)``. ``model.layers`` hands out views into that vector,
so the optimizer can update everything with a handful of vector operations
and the compiled kernels can walk the same buffer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import ShapeError

MLP_HIDDEN = (20, 30, 10)
KINDS = ("linear", "mlp")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteGradientError(ValueError):
    pass


def layer_dims(kind: str, input_dim: int) -> tuple[int, ...]:
    if kind not in KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {KINDS}")
    if input_dim < 1:
        raise ValueError(f"input dimension must be >= 1, got {input_dim}")
    if kind == "linear":
        return (input_dim, 1)
    return (input_dim, *MLP_HIDDEN, 1)


def param_layout(dims) -> list[tuple[slice, tuple[int, int], slice]]:
    """(weight slice, weight shape, bias slice) per layer into the flat vector."""
    out = []
    off = 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = slice(off, off + fan_in * fan_out)
        off = w.stop
        b = slice(off, off + fan_out)
        off = b.stop
        out.append((w, (fan_in, fan_out), b))
    return out


def n_params(dims) -> int:
    return sum(i * o + o for i, o in zip(dims[:-1], dims[1:]))


def _views(flat: np.ndarray, dims) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(flat[w].reshape(shape), flat[b]) for w, shape, b in param_layout(dims)]


@dataclass
class RegressionModel:
    kind: str
    dims: tuple[int, ...]
    theta: np.ndarray

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.theta = np.ascontiguousarray(self.theta, dtype=np.float64)
        if self.theta.shape != (n_params(self.dims),):
            raise ShapeError(f"expected {n_params(self.dims)} parameters for dims {self.dims}, got {self.theta.shape}")

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _views(self.theta, self.dims)

    def copy(self) -> RegressionModel:
        return RegressionModel(self.kind, self.dims, self.theta.copy())


@dataclass
class Gradients:
    dims: tuple[int, ...]
    values: np.ndarray

    @property
    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return _views(self.values, self.dims)


@dataclass
class AdamState:
    learning_rate: float
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def for_model(cls, model: RegressionModel, learning_rate: float) -> AdamState:
        if not learning_rate > 0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        z = np.zeros_like(model.theta)
        return cls(learning_rate, z, z.copy())


def init_model(kind: str, input_dim: int, rng: np.random.Generator) -> RegressionModel:
    """Glorot-uniform weights, zero biases."""
    dims = layer_dims(kind, input_dim)
    theta = np.zeros(n_params(dims))
    for w, (fan_in, fan_out), _ in param_layout(dims):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        theta[w] = rng.uniform(-limit, limit, size=fan_in * fan_out)
    return RegressionModel(kind, dims, theta)


def _check_input(model: RegressionModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ShapeError(f"model expects {model.input_dim} features, got input of shape {X.shape}")
    return X


def _affine(h: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    # fixed summation order over fan_in, so a row's output never depends on the batch it sits in
    acc = h[:, :1] * W[0]
    for k in range(1, W.shape[0]):
        acc += h[:, k : k + 1] * W[k]
    return acc + b


def _forward_cache(model: RegressionModel, X: np.ndarray) -> list[np.ndarray]:
    acts = [X]
    h = X
    layers = model.layers
    for i, (W, b) in enumerate(layers):
        h = _affine(h, W, b)
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
        acts.append(h)
    return acts


def forward_batch(model: RegressionModel, X) -> np.ndarray:
    X = _check_input(model, X)
    return _forward_cache(model, X)[-1][:, 0]


def backward_batch(model: RegressionModel, X, upstream) -> Gradients:
    """Gradient of ``sum_i upstream[i] * f(X[i])`` with respect to every parameter.

    ReLU units sitting exactly at zero pass no gradient.
    """
    X = _check_input(model, X)
    up = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if up.shape[0] != X.shape[0]:
        raise ShapeError(f"upstream has {up.shape[0]} entries for a batch of {X.shape[0]} rows")
    acts = _forward_cache(model, X)
    grads = Gradients(model.dims, np.zeros_like(model.theta))
    glayers = grads.layers
    d = up.reshape(-1, 1)
    for i in range(len(glayers) - 1, -1, -1):
        gW, gb = glayers[i]
        gW[...] = acts[i].T @ d
        gb[...] = d.sum(axis=0)
        if i > 0:
            d = (d @ model.layers[i][0].T) * (acts[i] > 0.0)
    return grads


def adam_step(model: RegressionModel, grads: Gradients, state: AdamState) -> tuple[RegressionModel, AdamState]:
    """One bias-corrected Adam update; returns new model and state, inputs untouched."""
    g = grads.values
    if g.shape != model.theta.shape or state.m.shape != model.theta.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match parameters {model.theta.shape}")
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NonFiniteGradientError(f"non-finite gradient at {param_path(model.dims, int(bad[0]))}")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    theta = model.theta - state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    new_state = AdamState(state.learning_rate, m, v, t, state.beta1, state.beta2, state.eps)
    return RegressionModel(model.kind, model.dims, theta), new_state


def param_path(dims, index: int) -> str:
    """Human-readable location of flat parameter ``index``, e.g. ``layers[1].weight[3, 0]``."""
    for li, (w, (_, fan_out), b) in enumerate(param_layout(dims)):
        if w.start <= index < w.stop:
            r, c = divmod(index - w.start, fan_out)
            return f"layers[{li}].weight[{r}, {c}]"
        if b.start <= index < b.stop:
            return f"layers[{li}].bias[{index - b.start}]"
    raise IndexError(index)


def to_dict(model: RegressionModel) -> dict:
    return {
        "kind": model.kind,
        "dims": list(model.dims),
        "layers": [{"weight": W.tolist(), "bias": b.tolist()} for W, b in model.layers],
    }


def from_dict(d: dict) -> RegressionModel:
    dims = tuple(d["dims"])
    theta = np.zeros(n_params(dims))
    model = RegressionModel(d["kind"], dims, theta)
    if len(d["layers"]) != len(dims) - 1:
        raise ShapeError(f"checkpoint has {len(d['layers'])} layers for dims {dims}")
    for (W, b), layer in zip(model.layers, d["layers"]):
        W[...] = np.asarray(layer["weight"], dtype=np.float64)
        b[...] = np.asarray(layer["bias"], dtype=np.float64)
    return model


def save_model(model: RegressionModel, path) -> None:
    Path(path).write_text(json.dumps(to_dict(model)))


def load_model(path) -> RegressionModel:
    return from_dict(json.loads(Path(path).read_text()))
