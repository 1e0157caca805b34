"""
Conditional risk measures on fitted one-dimensional estimators: CDF,
quantiles, value-at-risk and expected shortfall, plus a moment report.
"""

import logging
from typing import Union

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from app.core.config import settings
from app.core.errors import ConfigurationError, UnsupportedDimensionError
from app.models.schemas import MomentReport
from app.services.gmm import (
    gauss_legendre,
    gmm_cdf,
    gmm_closed_form_moments,
    gmm_sample,
    numeric_moments_1d,
    numeric_moments_mc,
)

logger = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
_MC_TOLERANCE = 6.0


def _require_1d(est):
    if est.y_dim != 1:
        raise UnsupportedDimensionError(f"risk measures need one-dimensional targets, estimator has {est.y_dim}")


def _check_level(q: float, name: str):
    if not 0.0 < q < 1.0:
        raise ConfigurationError(f"{name} must lie in (0, 1), got {q}")


def _quadrature_cdf(est, x, y: float) -> float:
    lo, hi = (float(v[0]) for v in est.support(x))
    if y <= lo:
        return 0.0
    if y >= hi:
        return 1.0
    nodes, weights = gauss_legendre(lo, y, settings.quadrature_points)
    return float(np.clip(weights @ est.pdf(x, nodes), 0.0, 1.0))


def conditional_cdf(est, x, y) -> Union[float, np.ndarray]:
    """``P(Y <= y | x)``; closed form for mixture conditionals, quadrature otherwise."""
    _require_1d(est)
    mixture = est.exact_mixture(x)
    if mixture is not None:
        return gmm_cdf(mixture, y)
    values = np.atleast_1d(np.asarray(y, dtype=np.float64)).ravel()
    out = np.array([_quadrature_cdf(est, x, v) for v in values])
    return float(out[0]) if np.ndim(y) == 0 else out


def conditional_quantile(est, x, q: float) -> float:
    """Root of ``cdf(y) - q`` by Brent's method on the estimator's support."""
    _require_1d(est)
    _check_level(q, "quantile level")
    lo, hi = (float(v[0]) for v in est.support(x))

    def excess(y: float) -> float:
        return float(conditional_cdf(est, x, y)) - q

    if excess(lo) >= 0.0:
        return lo
    if excess(hi) <= 0.0:
        return hi
    return float(brentq(excess, lo, hi, xtol=1e-12, rtol=1e-12))


def value_at_risk(est, x, alpha: float = 0.01) -> float:
    """The ``alpha``-quantile of the conditional return distribution."""
    _check_level(alpha, "alpha")
    return conditional_quantile(est, x, alpha)


def expected_shortfall(est, x, alpha: float = 0.01) -> float:
    """
    ``E[y | y <= VaR_alpha, x]``.

    For mixtures this is the sum of Gaussian partial expectations
    ``w_k * (mu_k * Phi(z_k) - sigma_k * phi(z_k))`` divided by ``alpha``.
    """
    var = value_at_risk(est, x, alpha)
    mixture = est.exact_mixture(x)
    if mixture is not None:
        mu, sigma = mixture.means[:, 0], mixture.scales[:, 0]
        z = (var - mu) / sigma
        phi = _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        return float(mixture.weights @ (mu * ndtr(z) - sigma * phi) / alpha)

    lo = float(est.support(x)[0][0])
    if var <= lo:
        return var
    nodes, weights = gauss_legendre(lo, var, settings.quadrature_points)
    return float(weights @ (nodes * est.pdf(x, nodes)) / alpha)


def conditional_moments(est, x) -> MomentReport:
    """
    Mean and covariance in closed form for mixtures; skewness and excess
    kurtosis by quadrature for one-dimensional targets. Multivariate
    covariances are cross-checked against a Monte Carlo estimate and a
    warning is added only when they disagree beyond six standard errors.
    """
    mixture = est.exact_mixture(x)
    if mixture is None:
        return est.moments(x)
    report = gmm_closed_form_moments(mixture)
    if mixture.ndim == 1:
        lo, hi = mixture.envelope(10.0, min_weight=1e-12)
        shape = numeric_moments_1d(mixture.pdf, (lo[0], hi[0]))
        report.skewness, report.excess_kurtosis = shape.skewness, shape.excess_kurtosis
        report.warnings.extend(shape.warnings)
    else:
        n = settings.mc_samples
        sampled = numeric_moments_mc(lambda rng, size: gmm_sample(mixture, rng, size), n=n)
        cov = np.asarray(report.covariance)
        deviation = np.abs(np.asarray(sampled.covariance) - cov)
        # Gaussian-approximation standard error of each sample covariance entry
        stderr = np.sqrt((np.outer(np.diag(cov), np.diag(cov)) + cov ** 2) / n)
        if np.any(deviation > _MC_TOLERANCE * stderr):
            message = (
                f"Monte Carlo check of {mixture.ndim}-dimensional covariance disagrees: "
                f"max abs deviation {np.max(deviation):.3g}"
            )
            logger.warning(message)
            report.warnings.append(message)
    return report
