import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm, skewnorm

from app.core.errors import ConfigurationError, UnsupportedDimensionError
from app.models.schemas import MomentReport
from app.services import risk
from app.services.neural_cde import MixtureDensityNetwork
from app.services.registry import build_oracle
from app.services.risk import (
    conditional_cdf,
    conditional_moments,
    conditional_quantile,
    expected_shortfall,
    value_at_risk,
)
from app.services.simulators import _skew_parameters


@pytest.fixture
def gaussian_oracle():
    # no jumps: y | x ~ N(0.08 + 0.2 x, 0.05**2)
    return build_oracle("arma_jump", {"jump_prob": 0.0})


def test_gaussian_value_at_risk(gaussian_oracle):
    mu = 0.08 + 0.2 * 0.1
    assert value_at_risk(gaussian_oracle, [0.1]) == pytest.approx(norm.ppf(0.01, mu, 0.05), abs=1e-10)
    assert value_at_risk(gaussian_oracle, [0.1], alpha=0.05) == pytest.approx(norm.ppf(0.05, mu, 0.05), abs=1e-10)


def test_gaussian_expected_shortfall(gaussian_oracle):
    mu, alpha = 0.1, 0.01
    z = norm.ppf(alpha)
    expected = mu - 0.05 * norm.pdf(z) / alpha
    assert expected_shortfall(gaussian_oracle, [0.1], alpha) == pytest.approx(expected, abs=1e-9)


def test_shortfall_lies_below_value_at_risk():
    oracle = build_oracle("arma_jump")
    for alpha in (0.01, 0.05, 0.2):
        assert expected_shortfall(oracle, [0.0], alpha) < value_at_risk(oracle, [0.0], alpha)


def test_quantile_inverts_cdf():
    oracle = build_oracle("arma_jump")
    for q in (0.01, 0.3, 0.9):
        y = conditional_quantile(oracle, [0.05], q)
        assert conditional_cdf(oracle, [0.05], y) == pytest.approx(q, abs=1e-10)


def test_cdf_is_monotone():
    values = conditional_cdf(build_oracle("econ"), [1.0], np.linspace(-5, 8, 50))
    assert np.all(np.diff(values) >= 0)
    assert 0.0 <= values[0] and values[-1] <= 1.0


def test_skew_normal_uses_quadrature():
    oracle = build_oracle("skew_normal")
    x, alpha = 0.5, 0.05
    loc, scale, shape = _skew_parameters(oracle.sim.params, x)
    var = value_at_risk(oracle, [x], alpha)
    assert var == pytest.approx(skewnorm.ppf(alpha, shape, loc, scale), abs=1e-6)

    partial, _ = quad(lambda y: y * skewnorm.pdf(y, shape, loc, scale), loc - 12 * scale, var)
    assert expected_shortfall(oracle, [x], alpha) == pytest.approx(partial / alpha, abs=1e-5)


def test_levels_must_lie_in_unit_interval(gaussian_oracle):
    for level in (0.0, 1.0, -0.1):
        with pytest.raises(ConfigurationError):
            value_at_risk(gaussian_oracle, [0.0], level)
        with pytest.raises(ConfigurationError):
            conditional_quantile(gaussian_oracle, [0.0], level)


def test_multivariate_targets_are_rejected():
    oracle = build_oracle("gaussian_mixture", {"ndim_y": 2})
    with pytest.raises(UnsupportedDimensionError):
        value_at_risk(oracle, [0.0])


def test_moments_of_mixture_conditional():
    report = conditional_moments(build_oracle("arma_jump"), [0.0])
    assert report.mean[0] == pytest.approx(0.07, abs=1e-12)
    assert report.skewness < 0
    assert report.excess_kurtosis > 0


def test_multivariate_covariance_check_is_quiet_when_it_agrees():
    report = conditional_moments(build_oracle("gaussian_mixture", {"ndim_y": 2}), [0.0])
    assert np.array(report.covariance).shape == (2, 2)
    assert report.skewness is None
    assert report.warnings == []


def test_multivariate_covariance_check_warns_on_disagreement(monkeypatch):
    oracle = build_oracle("gaussian_mixture", {"ndim_y": 2})
    exact = conditional_moments(oracle, [0.0])
    skewed = MomentReport(mean=exact.mean, covariance=(2.0 * np.array(exact.covariance)).tolist())
    monkeypatch.setattr(risk, "numeric_moments_mc", lambda sampler, n=None, seed=0: skewed)
    report = conditional_moments(oracle, [0.0])
    assert any("Monte Carlo" in warning for warning in report.warnings)


def test_moments_without_mixture_fall_back_to_quadrature():
    oracle = build_oracle("skew_normal")
    loc, scale, shape = _skew_parameters(oracle.sim.params, -0.2)
    report = conditional_moments(oracle, [-0.2])
    assert report.mean[0] == pytest.approx(skewnorm.mean(shape, loc, scale), abs=1e-8)
    assert report.skewness == pytest.approx(float(skewnorm.stats(shape, moments="s")), abs=1e-6)


def test_risk_on_fitted_network(econ_data, quick_mdn_config):
    est = MixtureDensityNetwork(quick_mdn_config).fit(econ_data)
    var = value_at_risk(est, [1.0], 0.05)
    assert conditional_cdf(est, [1.0], var) == pytest.approx(0.05, abs=1e-9)
    assert expected_shortfall(est, [1.0], 0.05) < var
