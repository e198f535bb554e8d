"""Location-privacy-preference recommendation by matrix factorization under local differential privacy."""

__version__ = "0.1.0"

from .exceptions import (
    CategoryMappingError,
    CoverageError,
    DivergenceError,
    EmptyDataError,
    InvalidArgumentError,
)
from .federated import LDPMatrixFactorization, train
from .ldp import NoiseConfig, client_report, debias_aggregate, randomized_response
from .mf import FactorModel, MatrixFactorization, PreferenceMatrix, binarize, init_model, loss
from .evaluation import EvalReport, ExperimentParams, run_experiment, sweep

__all__ = [
    "CategoryMappingError",
    "CoverageError",
    "DivergenceError",
    "EmptyDataError",
    "EvalReport",
    "ExperimentParams",
    "FactorModel",
    "InvalidArgumentError",
    "LDPMatrixFactorization",
    "MatrixFactorization",
    "NoiseConfig",
    "PreferenceMatrix",
    "binarize",
    "client_report",
    "debias_aggregate",
    "init_model",
    "loss",
    "randomized_response",
    "run_experiment",
    "sweep",
    "train",
]
