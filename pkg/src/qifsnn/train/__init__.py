"""Losses, optimizer, metrics, reference data and training loops."""

from .config import TrainConfig, default_config
from .data import (Dataset, burgers_reference, make_datasets, poisson_solve_oracle,
                   sample_grf_source)
from .loop import TrainingDiverged, TrainResult, evaluate, predict, train_task
from .metrics import Metrics, compute_metrics
from .optim import AdamState, adam_step, mse_loss, scheduled_lr

__all__ = [
    "TrainConfig",
    "default_config",
    "Dataset",
    "burgers_reference",
    "make_datasets",
    "poisson_solve_oracle",
    "sample_grf_source",
    "TrainingDiverged",
    "TrainResult",
    "evaluate",
    "predict",
    "train_task",
    "Metrics",
    "compute_metrics",
    "AdamState",
    "adam_step",
    "mse_loss",
    "scheduled_lr",
]
