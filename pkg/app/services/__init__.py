"""Services module: estimators, simulators, evaluation and benchmarks."""

from .estimator import ConditionalDensityEstimator, Dataset, NormalizationStats
from .gmm import GaussianMixture
from .neural_cde import KernelMixtureNetwork, MixtureDensityNetwork
from .nonparam_cde import ConditionalKernelDensity, LeastSquaresCde, NeighborKernelDensity
from .registry import OracleEstimator, build_estimator, build_oracle, load_model, save_model
from .simulators import build_simulator

__all__ = [
    "ConditionalDensityEstimator",
    "Dataset",
    "NormalizationStats",
    "GaussianMixture",
    "KernelMixtureNetwork",
    "MixtureDensityNetwork",
    "ConditionalKernelDensity",
    "LeastSquaresCde",
    "NeighborKernelDensity",
    "OracleEstimator",
    "build_estimator",
    "build_oracle",
    "load_model",
    "save_model",
    "build_simulator",
]
