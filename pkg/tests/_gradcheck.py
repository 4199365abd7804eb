"""Central finite-difference oracle for the training kernels.

The oracle evaluates predictions with ``plr.model.forward_batch`` and losses
with the scalar reference in ``plr.losses``, so it shares no code with the
kernels under test. Weighted aggregation keeps its weights frozen at the
base point, which is the function whose gradient training uses.
"""

import numpy as np

from plr.losses import AGG_CODES, LOSS_CODES, WEIGHT_EPS, Aggregation, PointwiseLoss, plr_loss, pointwise
from plr.model import KINDS, RegressionModel, init_model
from plr.numeric import make_rng

AGGS = tuple(AGG_CODES)
LOSSES = tuple(LOSS_CODES)
H = 1e-5


def random_problem(i: int, seed: int = 0):
    """Configuration ``i`` of the cycling (kind, aggregation, loss) sweep with random data."""
    rng = make_rng(seed, i)
    kind, agg, loss = KINDS[i % 2], AGGS[i % 5], LOSSES[i % 3]
    d = int(rng.integers(1, 7))
    n = int(rng.integers(1, 9))
    k = int(rng.integers(1, 5))
    model = init_model(kind, d, rng)
    model.theta[:] += rng.normal(0, 0.1, size=model.theta.size)
    X = rng.normal(size=(n, d))
    cands = rng.normal(0, 2, size=(n, k))
    y = cands[:, 0].copy()
    setup = dict(agg=Aggregation(agg, 0.5, float(rng.choice([0.0, 1.0, 10.0]))), loss=PointwiseLoss(loss, 0.7))
    return model, X, cands, y, setup


def _hidden_preacts(model, X):
    h, out = X, []
    layers = model.layers
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            out.append(h.copy())
            h = np.maximum(h, 0)
    return out, h[:, 0]


def signature(model, X, cands, y, setup):
    """Discrete state of the objective; the oracle is only valid where it is constant."""
    pre, pred = _hidden_preacts(model, X)
    parts = [p > 0 for p in pre]
    agg, loss = setup["agg"], setup["loss"]
    targets = y[:, None] if agg.kind == "supervised" else cands
    if agg.kind == "avg_value":
        targets = cands.mean(axis=1, keepdims=True)
    r = pred[:, None] - targets
    parts.append(r > 0)
    if loss.kind == "huber":
        parts.append(np.abs(r) <= loss.delta)
    if agg.kind == "min_loss":
        vals = np.array([[pointwise(loss, p, t)[0] for t in row] for p, row in zip(pred, cands)])
        parts.append(np.argmin(vals, axis=1))
    return [np.asarray(p).tolist() for p in parts]


def frozen_weights(model, X, cands, setup):
    agg, loss = setup["agg"], setup["loss"]
    if agg.kind != "weighted":
        return None
    pred = _hidden_preacts(model, X)[1]
    out = []
    for p, row in zip(pred, cands):
        v = np.array([pointwise(loss, p, t)[0] for t in row])
        s = agg.beta2 * np.maximum(v, WEIGHT_EPS) ** (-agg.beta1)
        e = np.exp(s - s.max())
        out.append(e / e.sum())
    return out


def objective(model, X, cands, y, setup, w=None) -> float:
    agg, loss = setup["agg"], setup["loss"]
    pred = _hidden_preacts(model, X)[1]
    total = 0.0
    for i, p in enumerate(pred):
        if w is not None:
            total += sum(wj * pointwise(loss, p, t)[0] for wj, t in zip(w[i], cands[i]))
        else:
            total += plr_loss(agg, loss, p, cands[i], y[i])[0]
    return total / len(pred)


def numeric_gradient(model, X, cands, y, setup):
    """Central differences; entries whose step crosses a kink come back as NaN."""
    base_sig = signature(model, X, cands, y, setup)
    w = frozen_weights(model, X, cands, setup)
    g = np.full(model.theta.size, np.nan)
    for j in range(model.theta.size):
        plus, minus = model.copy(), model.copy()
        plus.theta[j] += H
        minus.theta[j] -= H
        if signature(plus, X, cands, y, setup) != base_sig or signature(minus, X, cands, y, setup) != base_sig:
            continue
        g[j] = (objective(plus, X, cands, y, setup, w) - objective(minus, X, cands, y, setup, w)) / (2 * H)
    return g


def analytic_gradient(backend, model: RegressionModel, X, cands, y, setup):
    agg, loss = setup["agg"], setup["loss"]
    _, grad = backend.loss_and_grad(
        model.theta, model.dims, np.ascontiguousarray(X), np.ascontiguousarray(cands), np.ascontiguousarray(y),
        agg.code, loss.code, loss.delta, agg.beta1, agg.beta2,
    )  # fmt: skip
    return np.asarray(grad)


def max_relative_error(analytic, numeric, floor: float = 1e-6) -> tuple[float, int]:
    """Largest per-parameter relative error over checked entries and how many were checked."""
    ok = ~np.isnan(numeric)
    a, f = analytic[ok], numeric[ok]
    rel = np.abs(a - f) / np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
    return (float(rel.max()) if rel.size else 0.0), int(ok.sum())
