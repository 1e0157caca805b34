"""Shared fixtures: seeded generators, small datasets and quick configs."""

import numpy as np
import pytest

from app.models.configs import KmnConfig, MdnConfig
from app.services.estimator import Dataset
from app.services.simulators import build_simulator


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def econ_data() -> Dataset:
    return build_simulator("econ").sample_joint(300, np.random.default_rng(0))


@pytest.fixture
def arma_data() -> Dataset:
    return build_simulator("arma_jump").sample_joint(300, np.random.default_rng(1))


@pytest.fixture
def quick_mdn_config() -> MdnConfig:
    return MdnConfig(hidden_sizes=(8, 8), n_components=5, epochs=30, batch_size=64)


@pytest.fixture
def quick_kmn_config() -> KmnConfig:
    return KmnConfig(hidden_sizes=(8, 8), n_components=10, epochs=30, batch_size=64)


def finite_difference(f, theta: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat vector."""
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[i] += step
        down[i] -= step
        grad[i] = (f(up) - f(down)) / (2.0 * step)
    return grad
