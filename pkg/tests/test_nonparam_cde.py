import numpy as np
import pytest
from scipy.stats import norm

from app.core.errors import ConfigurationError, KernelUnderflowError, NoNeighborsError
from app.models.configs import CkdeConfig, LscdeConfig, NkdeConfig
from app.services.estimator import Dataset, normalize_fit
from app.services.evaluation import avg_log_likelihood
from app.services.gmm import integrate_1d
from app.services.nonparam_cde import (
    ConditionalKernelDensity,
    LeastSquaresCde,
    NeighborKernelDensity,
    ckde_fit,
    ckde_pdf,
    lscde_design,
    lscde_fit,
    lscde_pdf,
    loo_log_likelihood,
    neighbor_counts,
    nkde_effective_n,
    nkde_fit,
    nkde_loo_log_likelihood,
    nkde_pdf,
    silverman_bandwidth,
)
from app.services.simulators import build_simulator


def _mass(est, x) -> float:
    lo, hi = est.support(x)
    return integrate_1d(lambda y: est.pdf(x, y), lo[0], hi[0], 4000)


# ---------------------------------------------------------------------------
# Rule of thumb
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("std,n,d,expected", [
    (1.0, 1, 1, 1.06),
    (2.0, 100, 1, 0.843987),
    (1.0, 64, 2, 0.53),
])
def test_silverman_bandwidth(std, n, d, expected):
    assert silverman_bandwidth(std, n, d) == pytest.approx(expected, abs=1e-6)


def test_silverman_rejects_bad_inputs():
    with pytest.raises(ConfigurationError):
        silverman_bandwidth(0.0, 10, 1)
    with pytest.raises(ConfigurationError):
        silverman_bandwidth(1.0, 0, 1)


# ---------------------------------------------------------------------------
# CKDE
# ---------------------------------------------------------------------------

def test_ckde_rule_of_thumb_uses_joint_dimension(rng):
    data = Dataset(rng.standard_normal(100), rng.standard_normal(100))
    est = ckde_fit(data)
    expected = 1.06 * 100 ** (-1.0 / 6.0)
    assert est.h_x[0] == pytest.approx(expected, rel=1e-12)
    assert est.h_y[0] == pytest.approx(expected, rel=1e-12)


def test_ckde_needs_two_rows():
    with pytest.raises(ConfigurationError):
        ckde_fit(Dataset([[0.0]], [[1.0]]))


def test_ckde_single_point_is_its_y_kernel():
    est = ConditionalKernelDensity.with_bandwidths(Dataset([[0.5]], [[1.0]]), 0.3, 0.4)
    y = np.linspace(-1, 3, 11)
    for x in (0.5, -1.0, 2.0):
        np.testing.assert_allclose(est.pdf([x], y), norm.pdf(y, 1.0, 0.4), rtol=1e-12)


def test_ckde_far_query_follows_nearest_point():
    est = ConditionalKernelDensity.with_bandwidths(Dataset([[0.0], [1.0]], [[-2.0], [2.0]]), 0.1, 0.5)
    value = ckde_pdf(est, [3.0], 2.0)
    assert np.isfinite(value)
    assert value == pytest.approx(norm.pdf(2.0, 2.0, 0.5), rel=1e-9)


def test_ckde_underflow_names_query():
    est = ConditionalKernelDensity.with_bandwidths(Dataset([[0.0], [1.0]], [[0.0], [1.0]]), 0.1, 0.5)
    with pytest.raises(KernelUnderflowError) as info:
        est.pdf([1000.0], 0.0)
    assert "1000" in str(info.value)


def test_ckde_duplicate_points_behave_as_one():
    single = ConditionalKernelDensity.with_bandwidths(Dataset([[0.2]], [[0.7]]), 0.3, 0.4)
    double = ConditionalKernelDensity.with_bandwidths(Dataset([[0.2], [0.2]], [[0.7], [0.7]]), 0.3, 0.4)
    y = np.linspace(-1, 2, 9)
    np.testing.assert_allclose(double.pdf([0.0], y), single.pdf([0.0], y), rtol=1e-12)


def test_ckde_constant_x_reduces_to_kde_of_y(rng):
    Y = rng.standard_normal(20)
    est = ConditionalKernelDensity.with_bandwidths(Dataset(np.zeros(20), Y), 0.3, 0.25)
    y = np.linspace(-3, 3, 31)
    direct = np.mean(norm.pdf(y[:, None], Y[None, :], 0.25), axis=1)
    np.testing.assert_allclose(est.pdf([0.4], y), direct, rtol=0, atol=1e-10)


def test_loo_cv_does_not_lower_its_objective():
    data = build_simulator("arma_jump").sample_joint(200, 3)
    rot = ckde_fit(data)
    cv = ConditionalKernelDensity(CkdeConfig(mode="loo-cv", max_iter=60)).fit(data)
    _, train = normalize_fit(data)
    assert np.all(cv.h_x > 0) and np.all(cv.h_y > 0)
    assert loo_log_likelihood(train, cv.h_x, cv.h_y) >= loo_log_likelihood(train, rot.h_x, rot.h_y) - 1e-9


@pytest.mark.slow
def test_loo_cv_improves_held_out_likelihood():
    sim = build_simulator("arma_jump")
    gains = []
    for seed in range(5):
        data = sim.sample_joint(1000, seed)
        test = sim.sample_joint(1000, 100 + seed)
        rot = ckde_fit(data)
        cv = ckde_fit(data, mode="loo-cv")
        gains.append(avg_log_likelihood(cv, test) - avg_log_likelihood(rot, test))
    assert np.mean(gains) >= 0.0


# ---------------------------------------------------------------------------
# NKDE
# ---------------------------------------------------------------------------

def test_effective_n_limits():
    X = np.arange(10.0)[:, None]
    assert nkde_effective_n(X, 1e6) == 9.0
    assert nkde_effective_n(X, 0.5) == 1.0


def test_effective_n_on_even_grid():
    X = np.arange(100.0)[:, None]
    # interior points see two neighbors, the two ends see one
    assert nkde_effective_n(X, 1.5) == pytest.approx((98 * 3 + 2 * 2) / 100 - 1)


def test_neighborhoods_grow_with_epsilon(rng):
    X = rng.standard_normal((50, 2))
    previous = neighbor_counts(X, 0.1)
    for eps in (0.2, 0.5, 1.0, 3.0):
        counts = neighbor_counts(X, eps)
        assert np.all(counts >= previous)
        previous = counts


def _spread_data() -> Dataset:
    # normalized x spacing is 1/sqrt(2), wider than the default epsilon
    return Dataset(np.arange(5.0), np.array([0.3, -0.2, 1.1, 0.4, 0.9]))


def test_nkde_single_neighbor_is_one_kernel():
    data = _spread_data()
    est = nkde_fit(data)
    h = 1.06 * data.Y.std()
    y = np.linspace(-2, 4, 13)
    np.testing.assert_allclose(est.pdf([2.0], y), norm.pdf(y, 1.1, h), rtol=1e-12)


def test_nkde_empty_neighborhood_raises():
    est = nkde_fit(_spread_data())
    with pytest.raises(NoNeighborsError):
        nkde_pdf(est, [100.0], 0.0)


def test_nkde_large_epsilon_is_unconditional_kde(rng):
    data = Dataset(rng.standard_normal(40), rng.normal(1.0, 2.0, 40))
    est = nkde_fit(data, epsilon=1e6)
    h = est.bandwidth[0] * data.Y.std()
    y = np.linspace(-5, 7, 25)
    direct = np.mean(norm.pdf(y[:, None], data.Y[None, :, 0], h), axis=1)
    np.testing.assert_allclose(est.pdf([0.3], y), direct, rtol=1e-10)


def test_nkde_distance_weights_are_proportional(rng):
    data = Dataset(rng.standard_normal(60), rng.standard_normal(60))
    est = NeighborKernelDensity(NkdeConfig(epsilon=1.0, weighting="distance")).fit(data)
    x_norm = est.stats.normalize_x(np.array([0.1]))
    dist = np.linalg.norm(est.X - x_norm, axis=1)
    inside = dist[dist <= 1.0]
    g = est._normalized_conditional(x_norm, np.array([0.1]))
    np.testing.assert_allclose(g.weights, inside / inside.sum())


@pytest.mark.parametrize("weighting", ["uniform", "distance"])
def test_nkde_loo_objective_matches_row_by_row(rng, weighting):
    data = Dataset(rng.standard_normal((40, 2)), rng.standard_normal(40))
    h = np.array([0.35])
    expected = 0.0
    for i in range(40):
        dist = np.linalg.norm(data.X - data.X[i], axis=1)
        others = np.flatnonzero((dist <= 0.8) & (np.arange(40) != i))
        if others.size == 0:
            continue
        if weighting == "distance" and dist[others].sum() > 0:
            w = dist[others] / dist[others].sum()
        else:
            w = np.full(others.size, 1.0 / others.size)
        expected += np.log(np.sum(w * norm.pdf(data.Y[i, 0], data.Y[others, 0], h[0])))
    value = nkde_loo_log_likelihood(data, 0.8, h, weighting)
    assert value == pytest.approx(expected, rel=1e-10)


def test_nkde_loo_cv_does_not_lower_its_objective():
    data = build_simulator("arma_jump").sample_joint(200, 3)
    rot = nkde_fit(data)
    cv = NeighborKernelDensity(NkdeConfig(mode="loo-cv", max_iter=60)).fit(data)
    _, train = normalize_fit(data)
    assert np.all(cv.bandwidth > 0)
    eps = cv.config.epsilon
    assert nkde_loo_log_likelihood(train, eps, cv.bandwidth) >= nkde_loo_log_likelihood(train, eps, rot.bandwidth) - 1e-9


@pytest.mark.slow
def test_nkde_loo_cv_improves_held_out_likelihood():
    sim = build_simulator("arma_jump")
    gains = []
    for seed in range(5):
        data = sim.sample_joint(1000, seed)
        test = sim.sample_joint(1000, 100 + seed)
        rot = nkde_fit(data, epsilon=1.0)
        cv = nkde_fit(data, epsilon=1.0, mode="loo-cv")
        gap = np.abs(cv.stats.normalize_x(test.X)[:, None, 0] - cv.X[None, :, 0])
        covered = gap.min(axis=1) <= 1.0
        test = Dataset(test.X[covered], test.Y[covered])
        gains.append(avg_log_likelihood(cv, test) - avg_log_likelihood(rot, test))
    assert np.mean(gains) >= 0.0


# ---------------------------------------------------------------------------
# LSCDE
# ---------------------------------------------------------------------------

def test_lscde_coefficients_are_nonnegative(econ_data):
    est = lscde_fit(econ_data, n_centers=100)
    assert est.alpha.shape == (100,)
    assert np.all(est.alpha >= 0)


def test_lscde_quadratic_term_matches_quadrature(rng):
    X, Y = rng.standard_normal((30, 1)), rng.standard_normal((30, 1))
    cx, cy = X[:4], Y[:4]
    sigma = 0.5
    H, _ = lscde_design(X, Y, cx, cy, sigma)
    phi_x = np.exp(-(X - cx.T) ** 2 / (2 * sigma ** 2))
    for l in range(4):
        for k in range(4):
            overlap = integrate_1d(
                lambda y: np.exp(-(y - cy[l, 0]) ** 2 / (2 * sigma ** 2) - (y - cy[k, 0]) ** 2 / (2 * sigma ** 2)),
                -15.0, 15.0, 2000,
            )
            assert H[l, k] == pytest.approx(np.mean(phi_x[:, l] * phi_x[:, k]) * overlap, abs=1e-8)


def test_lscde_heavy_damping_shrinks_toward_linear_term(econ_data):
    est = LeastSquaresCde(LscdeConfig(n_centers=50, regularization=1e8)).fit(econ_data)
    _, train = normalize_fit(econ_data)
    _, h = lscde_design(train.X, train.Y, est.centers_x, est.centers_y, est.sigma)
    np.testing.assert_allclose(est.alpha * 1e8, h, rtol=1e-5)


def test_lscde_single_center_is_gaussian():
    est = LeastSquaresCde.from_parts([[0.0]], [[1.0]], [1.0], config=LscdeConfig(bandwidth=0.5))
    y = np.linspace(-1, 3, 9)
    for x in (0.0, 0.3, -1.2):
        np.testing.assert_allclose(est.pdf([x], y), norm.pdf(y, 1.0, 0.5), rtol=1e-12)
    assert lscde_pdf(est, [0.0], 1.0) == pytest.approx(norm.pdf(0.0, 0.0, 0.5))


# ---------------------------------------------------------------------------
# Shared properties
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("factory", [
    lambda d: ckde_fit(d),
    lambda d: nkde_fit(d, epsilon=1.0),
    lambda d: lscde_fit(d, n_centers=100),
])
def test_baselines_integrate_to_one(econ_data, factory):
    est = factory(econ_data)
    for x in (0.5, 1.0, 2.0):
        assert _mass(est, [x]) == pytest.approx(1.0, abs=1e-5)
        lo, hi = est.support([x])
        assert np.all(est.pdf([x], np.linspace(lo[0], hi[0], 200)) >= 0)


def test_fits_round_trip_through_documents(econ_data):
    for est in (ckde_fit(econ_data), nkde_fit(econ_data), lscde_fit(econ_data, n_centers=50)):
        restored = type(est).from_document(est.to_document())
        y = np.linspace(-1, 4, 7)
        np.testing.assert_allclose(restored.pdf([1.0], y), est.pdf([1.0], y), rtol=1e-12)
