"""Bayesian neural networks via factor-covariance variational inference,
benchmarked against post-hoc calibrated networks on tabular data."""

from .nn import BinaryBatch, NetworkArch, NetworkParams
from .vi import TrainConfig, VariationalParams, fit_bnn, predictive_probabilities

__all__ = ["BinaryBatch", "NetworkArch", "NetworkParams", "TrainConfig",
           "VariationalParams", "fit_bnn", "predictive_probabilities"]
__version__ = "0.1.0"
