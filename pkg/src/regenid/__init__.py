"""Regenerative system identification: a recurrent VAE teacher regularizing a feedforward student.

The teacher sees the whole output history through a GRU with stochastic
latents; the student predicts from a finite window of past inputs and
outputs. Training aligns the two representations so the student inherits
the teacher's state estimate while staying cheap to run.
"""
from ._backend import BACKEND
from .arch import LagSpec, LossWeights, ModelSpec, init_params, param_count
from .benchmarks import IoDataset, load_csv_dataset, save_csv_dataset
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .errors import (BoundaryError, ConfigError, DatasetFormatError, DivergenceError, NonFiniteError,
                     RegenError, ShapeError)
from .metrics import EvalReport, correlation_matrix, nll_metric, rmse
from .trainer import TrainConfig, TrainedPair, ensemble_average, fit, fit_ensemble, grid_search

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "LagSpec", "LossWeights", "ModelSpec", "init_params", "param_count",
    "IoDataset", "load_csv_dataset", "save_csv_dataset", "load_checkpoint", "save_checkpoint",
    "ExperimentConfig", "BoundaryError", "ConfigError", "DatasetFormatError", "DivergenceError",
    "NonFiniteError", "RegenError", "ShapeError", "EvalReport", "correlation_matrix", "nll_metric", "rmse",
    "TrainConfig", "TrainedPair", "ensemble_average", "fit", "fit_ensemble", "grid_search", "__version__",
]
