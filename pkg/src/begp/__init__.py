"""Multi-task Bayesian optimization with Bayesian embedding Gaussian processes."""

__version__ = "0.1.0"

from .begp import BegpModel, MultiTaskData, TrainConfig
from .bo_loop import LoopConfig, run_bo_continuous, run_bo_finite
from .acquisition import ContinuousDesignSpace, FiniteDesignSet, expected_improvement, maximize_ei, prob_best

__all__ = [
    "BegpModel",
    "MultiTaskData",
    "TrainConfig",
    "LoopConfig",
    "run_bo_continuous",
    "run_bo_finite",
    "ContinuousDesignSpace",
    "FiniteDesignSet",
    "expected_improvement",
    "maximize_ei",
    "prob_best",
]
