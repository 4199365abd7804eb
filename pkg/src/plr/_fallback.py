"""Pure-numpy training kernels.

Same signatures and arithmetic as the compiled ``plr._kernels`` module; used
when the extension is not built or ``PLR_BACKEND=python`` is set. Candidate
sums run column by column so the accumulation order matches the compiled
code and the scalar reference in ``plr.losses``.
"""

from __future__ import annotations

import numpy as np

from .losses import WEIGHT_EPS
from .model import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, param_layout

NAME = "python"


def _pointwise(loss: int, delta: float, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if loss == 0:
        return r * r, 2.0 * r
    if loss == 1:
        return np.abs(r), np.sign(r)
    a = np.abs(r)
    inside = a <= delta
    value = np.where(inside, 0.5 * r * r, delta * (a - 0.5 * delta))
    deriv = np.where(inside, r, delta * np.sign(r))
    return value, deriv


def _colsum(a: np.ndarray) -> np.ndarray:
    acc = a[:, 0].copy()
    for j in range(1, a.shape[1]):
        acc += a[:, j]
    return acc


def batch_loss(agg, loss, delta, beta1, beta2, pred, cands, y_true):
    """Per-example loss values and d(loss)/d(pred) for a batch."""
    pred = np.asarray(pred, dtype=np.float64)
    if agg == 0:
        return _pointwise(loss, delta, pred - y_true)
    k = cands.shape[1]
    if agg == 2:
        return _pointwise(loss, delta, pred - _colsum(cands) / k)
    values, derivs = _pointwise(loss, delta, pred[:, None] - cands)
    if agg == 1:
        return _colsum(values) / k, _colsum(derivs) / k
    if agg == 3:
        j = np.argmin(values, axis=1)
        rows = np.arange(values.shape[0])
        return values[rows, j], derivs[rows, j]
    scores = beta2 * np.maximum(values, WEIGHT_EPS) ** (-beta1)
    e = np.exp(scores - scores.max(axis=1, keepdims=True))
    z = _colsum(e)
    return _colsum(e * values) / z, _colsum(e * derivs) / z


def forward(theta, dims, X):
    h = X
    layout = param_layout(dims)
    for i, (w, shape, b) in enumerate(layout):
        h = h @ theta[w].reshape(shape) + theta[b]
        if i < len(layout) - 1:
            np.maximum(h, 0.0, out=h)
    return h[:, 0]


def loss_and_grad(theta, dims, X, cands, y_true, agg, loss, delta, beta1, beta2):
    """Summed batch loss and the gradient of the *mean* batch loss, flat like ``theta``."""
    layout = param_layout(dims)
    acts = [X]
    h = X
    for i, (w, shape, b) in enumerate(layout):
        h = h @ theta[w].reshape(shape) + theta[b]
        if i < len(layout) - 1:
            np.maximum(h, 0.0, out=h)
        acts.append(h)
    values, derivs = batch_loss(agg, loss, delta, beta1, beta2, h[:, 0], cands, y_true)
    grad = np.empty_like(theta)
    d = (derivs / X.shape[0]).reshape(-1, 1)
    for i in range(len(layout) - 1, -1, -1):
        w, shape, b = layout[i]
        grad[w] = (acts[i].T @ d).ravel()
        grad[b] = d.sum(axis=0)
        if i > 0:
            d = (d @ theta[w].reshape(shape).T) * (acts[i] > 0.0)
    return float(values.sum()), grad


def adam_update(theta, m, v, grad, step, lr):
    """In-place Adam update; ``step`` is the 1-based step count after this update."""
    m *= ADAM_BETA1
    m += (1.0 - ADAM_BETA1) * grad
    v *= ADAM_BETA2
    v += (1.0 - ADAM_BETA2) * (grad * grad)
    bc1 = 1.0 - ADAM_BETA1**step
    bc2 = 1.0 - ADAM_BETA2**step
    theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def train_epoch(theta, m, v, step, lr, dims, X, cands, y_true, perm, batch_size, agg, loss, delta, beta1, beta2):
    """Minibatch Adam over one shuffled pass.

    Returns ``(loss_sum, step, bad_batch)``; ``bad_batch`` is the index of the
    first batch with a non-finite loss (training stops there) or -1.
    """
    n = perm.shape[0]
    total = 0.0
    for bi, start in enumerate(range(0, n, batch_size)):
        idx = perm[start : start + batch_size]
        s, grad = loss_and_grad(theta, dims, X[idx], cands[idx], y_true[idx], agg, loss, delta, beta1, beta2)
        if not (np.isfinite(s) and np.all(np.isfinite(grad))):
            return total + s, step, bi
        total += s
        step += 1
        adam_update(theta, m, v, grad, step, lr)
    return total, step, -1
