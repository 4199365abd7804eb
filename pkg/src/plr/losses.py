"""Pointwise regression losses and candidate-set aggregations.

Every function returns the loss value together with its derivative with
respect to the prediction, which is all the model needs for backpropagation.
The functions here work on one example at a time and are the readable
reference; the batched training kernels in ``plr._fallback`` and
``plr._kernels`` implement the same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: clamp applied to candidate losses before raising them to ``-beta1``
WEIGHT_EPS = 1e-8

LOSS_CODES = {"mse": 0, "mae": 1, "huber": 2}
AGG_CODES = {"supervised": 0, "avg_loss": 1, "avg_value": 2, "min_loss": 3, "weighted": 4}


class NonFiniteInputError(ValueError):
    pass


class MissingLabelError(ValueError):
    pass


@dataclass(frozen=True)
class PointwiseLoss:
    kind: str = "mse"
    delta: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_CODES:
            raise ValueError(f"unknown pointwise loss {self.kind!r}; expected one of {sorted(LOSS_CODES)}")
        if self.kind == "huber" and not self.delta > 0:
            raise ValueError(f"Huber delta must be positive, got {self.delta}")

    @property
    def code(self) -> int:
        return LOSS_CODES[self.kind]


@dataclass(frozen=True)
class Aggregation:
    kind: str = "min_loss"
    beta1: float = 0.5
    beta2: float = 100.0

    def __post_init__(self):
        if self.kind not in AGG_CODES:
            raise ValueError(f"unknown aggregation {self.kind!r}; expected one of {sorted(AGG_CODES)}")
        if self.kind == "weighted" and not (self.beta1 > 0 and self.beta2 >= 0):
            raise ValueError(f"weighted aggregation needs beta1 > 0 and beta2 >= 0, got {self.beta1}, {self.beta2}")

    @property
    def code(self) -> int:
        return AGG_CODES[self.kind]


def pointwise(loss: PointwiseLoss, pred: float, y: float) -> tuple[float, float]:
    if not (math.isfinite(pred) and math.isfinite(y)):
        raise NonFiniteInputError(f"non-finite input: pred={pred}, y={y}")
    r = pred - y
    if loss.kind == "mse":
        return r * r, 2.0 * r
    if loss.kind == "mae":
        # subgradient 0 at r == 0
        return abs(r), float(np.sign(r))
    d = loss.delta
    if abs(r) <= d:
        return 0.5 * r * r, r
    return d * (abs(r) - 0.5 * d), d * float(np.sign(r))


def weights(loss_values, beta1: float, beta2: float) -> np.ndarray:
    """Softmax weights over candidates from scores ``beta2 * max(l, eps)**-beta1``.

    Smaller losses get larger weights; a candidate whose loss tends to zero
    takes all the mass.
    """
    losses = np.asarray(loss_values, dtype=np.float64)
    if losses.ndim != 1 or losses.size == 0:
        raise ValueError("loss_values must be a non-empty vector")
    if np.any(losses < 0) or not np.all(np.isfinite(losses)):
        raise ValueError("candidate losses must be finite and non-negative")
    scores = beta2 * np.maximum(losses, WEIGHT_EPS) ** (-beta1)
    e = np.exp(scores - scores.max())
    return e / e.sum()


def plr_loss(
    agg: Aggregation,
    loss: PointwiseLoss,
    pred: float,
    candidates,
    y_true: float | None = None,
) -> tuple[float, float]:
    """Loss and d(loss)/d(pred) of one example with candidate labels ``candidates``."""
    S = [float(c) for c in np.atleast_1d(candidates)]
    if not S:
        raise ValueError("candidate set is empty")
    if agg.kind == "supervised":
        if y_true is None:
            raise MissingLabelError("supervised aggregation needs the true label")
        return pointwise(loss, pred, y_true)
    if agg.kind == "avg_value":
        return pointwise(loss, pred, _seqsum(S) / len(S))

    terms = [pointwise(loss, pred, y) for y in S]
    if agg.kind == "avg_loss":
        k = len(terms)
        return _seqsum(v for v, _ in terms) / k, _seqsum(d for _, d in terms) / k
    if agg.kind == "min_loss":
        best = 0
        for j in range(1, len(terms)):
            if terms[j][0] < terms[best][0]:
                best = j
        return terms[best]

    values = np.array([v for v, _ in terms])
    scores = agg.beta2 * np.maximum(values, WEIGHT_EPS) ** (-agg.beta1)
    e = np.exp(scores - scores.max())
    # normalize after summing so that beta2 == 0 reproduces avg_loss bit for bit
    z = _seqsum(e)
    return (
        _seqsum(ei * v for ei, (v, _) in zip(e, terms)) / z,
        _seqsum(ei * d for ei, (_, d) in zip(e, terms)) / z,
    )


def _seqsum(xs) -> float:
    total = 0.0
    for x in xs:
        total += float(x)
    return total
