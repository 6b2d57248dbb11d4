"""Variational Bayes neural networks with Bayesian-linear-model initialization."""
from .blm import (BayesianLinearRegression, blr_predict, fit_blr, fit_hetero_blr,
                  project_factorized, transform_labels)
from .estimator import VariationalClassifier, VariationalRegressor
from .exceptions import VBInitError
from .initializers import INITIALIZERS, InitSpec, initialize
from .numkernel import make_rng
from .train import AnnealSchedule, TrainConfig, train_loop
from .vnet import Classification, Network, Regression, build_network, kl_to_prior, nelbo

__version__ = "0.1.0"

__all__ = [
    "BayesianLinearRegression", "blr_predict", "fit_blr", "fit_hetero_blr",
    "project_factorized", "transform_labels",
    "VariationalClassifier", "VariationalRegressor", "VBInitError",
    "INITIALIZERS", "InitSpec", "initialize", "make_rng",
    "AnnealSchedule", "TrainConfig", "train_loop",
    "Classification", "Network", "Regression", "build_network", "kl_to_prior", "nelbo",
]
