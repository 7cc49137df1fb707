"""Synthetic learning harness: data with known Bayes predictors, SGD, gradient diagnostics."""
from .data import BayesPredictor, Dataset, SyntheticSpec, clipped_normal_mean, generate_synthetic
from .decomposition import GradientTerms, grad_decomposition, population_gradient
from .experiment import (CSV_COLUMNS, NON_PRIVATE, CellResult, ExperimentConfig, ExperimentReport,
                         MechanismSpec, run_cell, run_experiment)
from .models import (MODEL_KINDS, POSITIVE_FLOOR, LinearModel, MLPModel, Model, make_model,
                     objective, objective_grad)
from .train import SGDConfig, TrainResult, train_sgd

__all__ = [
    "SyntheticSpec", "BayesPredictor", "Dataset", "generate_synthetic", "clipped_normal_mean",
    "GradientTerms", "grad_decomposition", "population_gradient",
    "MechanismSpec", "ExperimentConfig", "CellResult", "ExperimentReport", "run_cell",
    "run_experiment", "NON_PRIVATE", "CSV_COLUMNS",
    "Model", "LinearModel", "MLPModel", "make_model", "objective", "objective_grad",
    "POSITIVE_FLOOR", "MODEL_KINDS", "SGDConfig", "TrainResult", "train_sgd",
]
