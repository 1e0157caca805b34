"""
Directional checks of the benchmark findings: who beats whom, not exact numbers.
Run with ``pytest -m slow``.
"""

import numpy as np
import pytest

from app.models.configs import MdnConfig
from app.models.schemas import BenchmarkConfig
from app.services.benchmark import BenchmarkRunner, aggregate_results
from app.services.evaluation import avg_log_likelihood
from app.services.neural_cde import MixtureDensityNetwork
from app.services.simulators import build_simulator

pytestmark = pytest.mark.slow

SIMULATORS = ["econ", "arma_jump", "skew_normal"]
PROTOCOL = {"n_x_points": 10, "quadrature_points": 2000, "seeds": [0], "n_holdout": 500}


def _hellinger_by(summary, *columns):
    return {tuple(row[c] for c in columns): row["hellinger_mean"] for _, row in summary.iterrows()}


def _run(**config):
    config.setdefault("n_seeds", 5)
    config.setdefault("protocol", PROTOCOL)
    return aggregate_results(BenchmarkRunner(BenchmarkConfig(**config)).run(parallel=4))


@pytest.mark.parametrize("sim", SIMULATORS)
def test_noise_regularization_lowers_hellinger(sim):
    summary = _run(
        mode="noise_sweep",
        simulators=[{"name": sim}],
        estimators=[{"name": "mdn"}, {"name": "kmn"}],
        sample_sizes=[1600],
        noise_grid=[0.0, 0.1, 0.2],
    )
    h = _hellinger_by(summary, "estimator", "eta_x", "eta_y")
    for est in ("mdn", "kmn"):
        assert h[(est, 0.2, 0.1)] < h[(est, 0.0, 0.0)]


@pytest.mark.parametrize("sim", ["arma_jump", "skew_normal"])
def test_data_normalization_lowers_hellinger(sim):
    summary = _run(
        simulators=[{"name": sim}],
        estimators=[
            {"name": "mdn", "label": "mdn_normalized"},
            {"name": "mdn", "label": "mdn_raw", "config": {"data_normalization": False}},
        ],
        sample_sizes=[1600],
    )
    h = _hellinger_by(summary, "estimator")
    assert h[("mdn_normalized",)] < h[("mdn_raw",)]


def test_estimator_ordering():
    summary = _run(
        simulators=[{"name": sim} for sim in SIMULATORS],
        estimators=[{"name": name} for name in ("ckde", "ckde_cv", "nkde", "lscde", "mdn", "kmn")],
        sample_sizes=[3200],
    )
    h = _hellinger_by(summary, "simulator", "estimator")
    for sim in SIMULATORS:
        assert h[(sim, "ckde_cv")] <= h[(sim, "ckde")]
        assert h[(sim, "ckde")] <= h[(sim, "nkde")]
    for sim in ("arma_jump", "skew_normal"):
        baselines = min(h[(sim, name)] for name in ("ckde", "ckde_cv", "nkde", "lscde"))
        assert h[(sim, "mdn")] <= baselines
        assert h[(sim, "kmn")] <= baselines


def test_training_beats_an_untrained_network():
    sim = build_simulator("econ")
    train = sim.sample_joint(800, np.random.default_rng(0))
    test = sim.sample_joint(2000, np.random.default_rng(1))
    config = MdnConfig(epochs=300, n_components=5)
    trained = MixtureDensityNetwork(config).fit(train)
    untrained = MixtureDensityNetwork(config.model_copy(update={"epochs": 0})).fit(train)
    assert avg_log_likelihood(trained, test) > avg_log_likelihood(untrained, test)
