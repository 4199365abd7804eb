"""Regression from candidate label sets: losses, models, data protocol and experiment runners."""

__version__ = "0.1.0"

from ._backend import NAME as BACKEND  # noqa: E402
from .datagen import PartialDataset, make_splits  # noqa: E402
from .losses import Aggregation, PointwiseLoss, plr_loss, weights  # noqa: E402
from .model import RegressionModel, init_model  # noqa: E402
from .trainer import METHODS, TrainConfig, config_for, evaluate, fit, select  # noqa: E402

__all__ = [
    "BACKEND",
    "METHODS",
    "Aggregation",
    "PartialDataset",
    "PointwiseLoss",
    "RegressionModel",
    "TrainConfig",
    "config_for",
    "evaluate",
    "fit",
    "init_model",
    "make_splits",
    "plr_loss",
    "select",
    "weights",
]
