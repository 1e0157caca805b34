import json

import numpy as np
import pytest

from app.core.errors import ConfigurationError, EstimatorStateError
from app.models.configs import CkdeConfig, MdnConfig
from app.models.schemas import EstimatorKind
from app.services.estimator import Dataset
from app.services.registry import (
    ESTIMATORS,
    OracleEstimator,
    build_estimator,
    build_oracle,
    estimator_config,
    load_model,
    save_model,
)
from app.services.simulators import build_simulator


def test_every_registered_name_builds():
    for name in ESTIMATORS:
        est = build_estimator(name)
        assert not est.is_fitted


def test_cross_validated_ckde_forces_its_mode():
    assert build_estimator("ckde_cv").config.mode == "loo-cv"
    assert build_estimator("ckde_cv", {"mode": "rule_of_thumb"}).config.mode == "loo-cv"
    assert build_estimator("ckde").config == CkdeConfig()


def test_cross_validated_nkde_forces_its_mode():
    assert build_estimator("nkde_cv").config.mode == "loo-cv"
    assert build_estimator("nkde_cv", {"mode": "rule_of_thumb"}).config.mode == "loo-cv"
    assert build_estimator("nkde").config.mode == "rule_of_thumb"


def test_overrides_are_validated():
    assert estimator_config("mdn", {"n_components": 3}) == MdnConfig(n_components=3)
    with pytest.raises(ConfigurationError):
        estimator_config("mdn", {"n_components": 0})
    with pytest.raises(ConfigurationError):
        estimator_config("mdn", {"not_a_field": 1})


def test_unknown_estimator_lists_valid_names():
    with pytest.raises(ConfigurationError) as info:
        build_estimator("forest")
    assert "mdn" in str(info.value) and "lscde" in str(info.value)


def test_oracle_is_fitted_on_construction():
    oracle = build_oracle("econ")
    assert oracle.is_fitted
    assert oracle.pdf([1.0], 1.0) == pytest.approx(build_simulator("econ").conditional_pdf([1.0], 1.0))
    with pytest.raises(ConfigurationError):
        oracle.fit(Dataset(np.zeros((3, 2)), np.zeros(3)))


def test_oracle_moments_use_closed_form():
    mean, std = build_oracle("econ").mean_std([2.0])
    assert mean[0] == pytest.approx(4.0)
    assert std[0] == pytest.approx(3.0)


@pytest.mark.parametrize("name,overrides", [
    ("mdn", {"epochs": 5, "n_components": 3, "hidden_sizes": [4]}),
    ("kmn", {"epochs": 5, "n_components": 6, "hidden_sizes": [4]}),
    ("ckde", {}),
    ("nkde", {"epsilon": 1.0}),
    ("lscde", {"n_centers": 40}),
])
def test_saved_models_reload_identically(tmp_path, econ_data, name, overrides):
    est = build_estimator(name, overrides).fit(econ_data)
    path = save_model(est, tmp_path / f"{name}.json")
    restored = load_model(path)
    assert restored.kind == est.kind
    y = np.linspace(-2, 6, 17)
    for x in (0.5, 1.5):
        np.testing.assert_allclose(restored.pdf([x], y), est.pdf([x], y), rtol=1e-12)


def test_oracle_model_file_round_trip(tmp_path):
    path = save_model(build_oracle("arma_jump", {"jump_prob": 0.2}), tmp_path / "oracle.json")
    document = json.loads(path.read_text())
    assert document["kind"] == EstimatorKind.ORACLE.value
    assert document["config"]["simulator"] == "arma_jump"
    restored = load_model(path)
    assert isinstance(restored, OracleEstimator)
    assert restored.sim.params.jump_prob == 0.2


def test_unfitted_model_cannot_be_saved(tmp_path):
    with pytest.raises(EstimatorStateError):
        save_model(build_estimator("mdn"), tmp_path / "m.json")


def test_bad_model_files(tmp_path):
    with pytest.raises(ConfigurationError):
        load_model(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text('{"kind": "mdn"}')
    with pytest.raises(ConfigurationError):
        load_model(broken)
