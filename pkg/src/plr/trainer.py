"""Minibatch Adam training for every (aggregation, loss, model) combination."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _backend
from .datagen import PartialDataset
from .losses import AGG_CODES, LOSS_CODES, Aggregation, PointwiseLoss
from .model import KINDS, RegressionModel, init_model
from .numeric import make_rng

#: method name -> (aggregation, pointwise loss)
METHODS = {
    "supervised": ("supervised", "mse"),
    "avgl-mse": ("avg_loss", "mse"),
    "avgl-mae": ("avg_loss", "mae"),
    "avgl-huber": ("avg_loss", "huber"),
    "avgv-mse": ("avg_value", "mse"),
    "avgv-mae": ("avg_value", "mae"),
    "avgv-huber": ("avg_value", "huber"),
    "ident": ("min_loss", "mse"),
    "pident": ("weighted", "mse"),
}

LEARNING_RATES = (0.01, 0.001)
HUBER_DELTAS = (1.0, 5.0)
PIDENT_BETA2S = (10.0, 100.0, 500.0, 1000.0, 10000.0)
VALIDATION_METRICS = ("partial_min", "true_mse")
#: an epoch whose mean train loss exceeds this multiple of the initial loss counts as diverged
DIVERGENCE_FACTOR = 1e8


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, batch: int, message: str = ""):
        self.epoch = epoch
        self.batch = batch
        super().__init__(message or f"training diverged at epoch {epoch}, batch {batch}")


class SelectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "mlp"
    aggregation: str = "min_loss"
    pointwise_loss: str = "mse"
    learning_rate: float = 0.001
    batch_size: int = 256
    epochs: int = 1000
    seed: int = 0
    beta1: float = 0.5
    beta2: float = 100.0
    huber_delta: float = 1.0
    validation_metric: str = "partial_min"

    def __post_init__(self):
        if self.model_kind not in KINDS:
            raise ValueError(f"model_kind must be one of {KINDS}")
        if self.aggregation not in AGG_CODES or self.pointwise_loss not in LOSS_CODES:
            raise ValueError(f"unknown aggregation/loss {self.aggregation!r}/{self.pointwise_loss!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.validation_metric not in VALIDATION_METRICS:
            raise ValueError(f"validation_metric must be one of {VALIDATION_METRICS}")
        # validates beta/delta ranges
        self.agg()
        self.loss()

    def agg(self) -> Aggregation:
        return Aggregation(self.aggregation, self.beta1, self.beta2)

    def loss(self) -> PointwiseLoss:
        return PointwiseLoss(self.pointwise_loss, self.huber_delta)

    @property
    def selection_target(self) -> str:
        """What the validation metric compares predictions against.

        The supervised baseline sees true labels everywhere, so it is
        always selected on true validation MSE.
        """
        if self.validation_metric == "true_mse" or self.aggregation == "supervised":
            return "true_labels"
        return "min_candidate"


def config_for(method: str, **overrides) -> TrainConfig:
    try:
        agg, loss = METHODS[method]
    except KeyError:
        raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}") from None
    return TrainConfig(aggregation=agg, pointwise_loss=loss, **overrides)


def method_grid(
    method: str,
    learning_rates=LEARNING_RATES,
    huber_deltas=HUBER_DELTAS,
    beta2s=PIDENT_BETA2S,
    **base,
) -> list[TrainConfig]:
    """Hyperparameter grid searched for ``method``, in a fixed order."""
    cfg = config_for(method, **base)
    deltas = huber_deltas if cfg.pointwise_loss == "huber" else (cfg.huber_delta,)
    betas = beta2s if cfg.aggregation == "weighted" else (cfg.beta2,)
    return [
        replace(cfg, learning_rate=float(lr), huber_delta=float(d), beta2=float(b2))
        for lr in learning_rates
        for d in deltas
        for b2 in betas
    ]


@dataclass
class FitOutcome:
    model: RegressionModel
    train_loss: np.ndarray
    validation_metric: np.ndarray
    seconds: float
    config: TrainConfig
    extra: dict = field(default_factory=dict)

    @property
    def final_validation(self) -> float:
        return float(self.validation_metric[-1])

    def to_json(self) -> dict:
        return {
            "config": asdict(self.config),
            "backend": _backend.NAME,
            "train_loss": [float(x) for x in self.train_loss],
            "validation_metric": [float(x) for x in self.validation_metric],
            "final_validation_metric": self.final_validation,
            "seconds": self.seconds,
            **self.extra,
        }


def predict(model: RegressionModel, X) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=np.float64)
    return _backend.kernels.forward(model.theta, model.dims, X)


def evaluate(model: RegressionModel, dataset: PartialDataset, against: str = "true_labels") -> float:
    """Mean squared error against the true labels or the closest candidate."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    pred = predict(model, dataset.X)
    if against == "true_labels":
        return float(np.mean((pred - dataset.y_true) ** 2))
    if against == "min_candidate":
        return float(np.mean(np.min((pred[:, None] - dataset.candidates) ** 2, axis=1)))
    raise ValueError(f"unknown evaluation target {against!r}")


def fit(config: TrainConfig, train: PartialDataset, validation: PartialDataset) -> FitOutcome:
    """Train a fresh model; identical inputs give a bitwise-identical model."""
    n, d = train.X.shape
    if n == 0:
        raise ValueError("training set is empty")
    if validation.X.shape[1] != d:
        raise ValueError(f"validation has {validation.X.shape[1]} features, train has {d}")
    k = _backend.kernels
    model = init_model(config.model_kind, d, make_rng(config.seed, 0))
    shuffle = make_rng(config.seed, 1)
    theta = model.theta
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    agg, loss = AGG_CODES[config.aggregation], LOSS_CODES[config.pointwise_loss]
    target = config.selection_target
    args = (agg, loss, config.huber_delta, config.beta1, config.beta2)
    init_loss, _ = k.loss_and_grad(theta, model.dims, train.X, train.candidates, train.y_true, *args)
    limit = DIVERGENCE_FACTOR * max(init_loss / n, 1.0)
    train_trace = np.empty(config.epochs)
    val_trace = np.empty(config.epochs)
    step = 0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        perm = shuffle.permutation(n)
        total, step, bad = k.train_epoch(
            theta, m, v, step, config.learning_rate, model.dims,
            train.X, train.candidates, train.y_true, perm, config.batch_size, *args,
        )  # fmt: skip
        if bad >= 0 or not np.isfinite(total):
            raise DivergenceError(epoch, max(bad, 0))
        if total / n > limit:
            raise DivergenceError(epoch, -1, f"train loss {total / n:.3g} blew up past {limit:.3g} at epoch {epoch}")
        train_trace[epoch] = total / n
        val_trace[epoch] = evaluate(model, validation, target)
        if not np.isfinite(val_trace[epoch]):
            raise DivergenceError(epoch, -1, f"validation metric became non-finite at epoch {epoch}")
    return FitOutcome(model, train_trace, val_trace, time.perf_counter() - t0, config)


def select(configs, train: PartialDataset, validation: PartialDataset) -> tuple[TrainConfig, FitOutcome]:
    """Fit every config and keep the one with the lowest final validation metric.

    Diverged fits are skipped; ties go to the earlier config.
    """
    configs = list(configs)
    if not configs:
        raise SelectionError("empty configuration grid")
    best = None
    failures = []
    for cfg in configs:
        try:
            out = fit(cfg, train, validation)
        except DivergenceError as e:
            failures.append(f"lr={cfg.learning_rate} beta2={cfg.beta2} delta={cfg.huber_delta}: {e}")
            continue
        if best is None or out.final_validation < best.final_validation:
            best = out
    if best is None:
        raise SelectionError("every configuration diverged:\n  " + "\n  ".join(failures))
    best.extra["grid_failures"] = failures
    return best.config, best


