"""
Gaussian mixtures with diagonal covariances and the numerical integration
helpers used for moments and distances.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp, ndtr, roots_legendre

from app.core.config import settings
from app.core.errors import InputShapeError, InvalidDensityError, InvalidTransformError, ParameterError
from app.models.schemas import MixtureDocument, MomentReport

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
# Upper bound on the (points x components x dims) block materialized per chunk.
_CHUNK_ELEMENTS = 1 << 22

SeedLike = Union[int, np.random.Generator, None]


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    """Weights ``(K,)``, means ``(K, m)`` and diagonal scales ``(K, m)``."""

    weights: np.ndarray
    means: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        weights = np.array(self.weights, dtype=np.float64).ravel()
        means = np.array(self.means, dtype=np.float64)
        scales = np.array(self.scales, dtype=np.float64)
        if means.ndim == 1:
            means = means[:, None]
        if scales.ndim == 1:
            scales = scales[:, None]

        if means.shape != scales.shape or means.shape[0] != weights.size or weights.size == 0:
            raise InputShapeError(
                f"mixture shapes disagree: weights {weights.shape}, means {means.shape}, scales {scales.shape}"
            )
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ParameterError(f"mixture weights must be nonnegative and sum to 1, got sum {weights.sum()!r}")
        if not np.all(scales > 0) or not np.all(np.isfinite(scales)):
            raise ParameterError("mixture scales must be positive and finite")
        if not np.all(np.isfinite(means)):
            raise ParameterError("mixture means must be finite")

        for name, value in (("weights", weights), ("means", means), ("scales", scales)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def ndim(self) -> int:
        return self.means.shape[1]

    def log_pdf(self, y) -> Union[float, np.ndarray]:
        return gmm_log_pdf(self, y)

    def pdf(self, y) -> Union[float, np.ndarray]:
        return np.exp(gmm_log_pdf(self, y))

    def envelope(self, width: float = 10.0, min_weight: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
        """Per-dimension ``[min(mu - width*sigma), max(mu + width*sigma)]`` over components above ``min_weight``."""
        keep = self.weights > min_weight
        if not np.any(keep):
            keep = self.weights == self.weights.max()
        lo = np.min(self.means[keep] - width * self.scales[keep], axis=0)
        hi = np.max(self.means[keep] + width * self.scales[keep], axis=0)
        return lo, hi

    def to_document(self) -> MixtureDocument:
        return MixtureDocument(
            weights=self.weights.tolist(),
            means=self.means.tolist(),
            scales=self.scales.tolist(),
        )

    @classmethod
    def from_document(cls, doc: MixtureDocument) -> "GaussianMixture":
        return cls(doc.weights, doc.means, doc.scales)


def as_points(y, ndim: int) -> Tuple[np.ndarray, bool]:
    """
    Coerce ``y`` into a ``(n, ndim)`` batch.

    A scalar or a vector of length ``ndim`` is one point; for ``ndim == 1`` a
    longer vector is read as a batch of scalars.

    Returns:
        (points, single) where ``single`` tells whether one point was given
    """
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 1:
        if arr.size == ndim:
            return arr[None, :], True
        if ndim == 1:
            return arr[:, None], False
    elif arr.ndim == 2 and arr.shape[1] == ndim:
        return arr, False
    raise InputShapeError(f"expected points of dimension {ndim}, got shape {arr.shape}")


def gmm_log_pdf(g: GaussianMixture, y) -> Union[float, np.ndarray]:
    """
    Log density of the mixture, stabilized with log-sum-exp.

    Args:
        g: the mixture
        y: one point or a batch ``(n, m)``

    Returns:
        a float for a single point, an ``(n,)`` array for a batch
    """
    points, single = as_points(y, g.ndim)
    with np.errstate(divide="ignore"):
        log_w = np.log(g.weights)
    log_norm = -0.5 * g.ndim * _LOG_2PI - np.sum(np.log(g.scales), axis=1)

    out = np.empty(points.shape[0])
    step = max(1, _CHUNK_ELEMENTS // (g.n_components * g.ndim))
    for start in range(0, points.shape[0], step):
        block = points[start:start + step]
        z = (block[:, None, :] - g.means[None, :, :]) / g.scales[None, :, :]
        component = log_w + log_norm - 0.5 * np.sum(z * z, axis=2)
        out[start:start + step] = logsumexp(component, axis=1)
    return float(out[0]) if single else out


def gmm_cdf(g: GaussianMixture, y) -> Union[float, np.ndarray]:
    """Mixture CDF for one-dimensional mixtures."""
    if g.ndim != 1:
        raise InputShapeError("mixture CDF needs a one-dimensional mixture")
    points, single = as_points(y, 1)
    z = (points - g.means[:, 0][None, :]) / g.scales[:, 0][None, :]
    out = ndtr(z) @ g.weights
    return float(out[0]) if single else out


def gmm_sample(g: GaussianMixture, rng: SeedLike, n: int) -> np.ndarray:
    """Draw ``n`` points: categorical component choice, then a diagonal Gaussian draw."""
    if n < 1:
        raise ParameterError("sample size must be at least 1")
    rng = np.random.default_rng(rng)
    components = rng.choice(g.n_components, size=n, p=g.weights)
    noise = rng.standard_normal((n, g.ndim))
    return g.means[components] + g.scales[components] * noise


def gmm_linear_transform(g: GaussianMixture, a: Sequence[float], b_diag: Sequence[float]) -> GaussianMixture:
    """
    Mixture of ``a + diag(b_diag) y`` for ``y`` distributed as ``g``.

    Weights are unchanged, means map affinely and scales multiply by ``b_diag``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b_diag = np.asarray(b_diag, dtype=np.float64).ravel()
    if a.size != g.ndim or b_diag.size != g.ndim:
        raise InputShapeError(f"transform dimension must be {g.ndim}, got a={a.size}, b={b_diag.size}")
    if not np.all(b_diag > 0):
        raise InvalidTransformError(f"transform scale must be positive, got {b_diag.tolist()}")
    return GaussianMixture(g.weights, a + b_diag * g.means, b_diag * g.scales)


def gmm_closed_form_moments(g: GaussianMixture) -> MomentReport:
    mean = g.weights @ g.means
    centered = g.means - mean
    covariance = (centered.T * g.weights) @ centered + np.diag(g.weights @ (g.scales ** 2))
    return MomentReport(mean=mean.tolist(), covariance=covariance.tolist())


@lru_cache(maxsize=8)
def _legendre(n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    nodes, weights = roots_legendre(n_points)
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return nodes, weights


def gauss_legendre(lo: float, hi: float, n_points: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights mapped onto ``[lo, hi]``."""
    n_points = n_points or settings.quadrature_points
    if n_points < 2:
        raise ParameterError("quadrature needs at least 2 points")
    nodes, weights = _legendre(int(n_points))
    half = 0.5 * (hi - lo)
    return lo + half * (nodes + 1.0), half * weights


def integrate_1d(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float, n_points: Optional[int] = None) -> float:
    """Integral of a vectorized function over ``[lo, hi]``."""
    nodes, weights = gauss_legendre(lo, hi, n_points)
    return float(np.dot(weights, np.asarray(f(nodes), dtype=np.float64)))


def numeric_moments_1d(
    pdf: Callable[[np.ndarray], np.ndarray],
    support: Tuple[float, float],
    n_points: Optional[int] = None,
) -> MomentReport:
    """
    Mean, variance, skewness and excess kurtosis of a 1-D density by
    Gauss-Legendre quadrature of the defining integrals.

    Args:
        pdf: vectorized density function
        support: integration interval
        n_points: quadrature nodes (defaults to ``settings.quadrature_points``)

    Returns:
        MomentReport; carries a warning when less than 99% of the mass lies on the support
    """
    lo, hi = float(support[0]), float(support[1])
    nodes, weights = gauss_legendre(lo, hi, n_points)
    density = np.asarray(pdf(nodes), dtype=np.float64)
    if np.any(density < 0):
        raise InvalidDensityError("density function returned negative values")

    mass_weights = weights * density
    mass = float(mass_weights.sum())
    mean = float(mass_weights @ nodes)
    centered = nodes - mean
    variance = float(mass_weights @ centered ** 2)
    std = np.sqrt(variance)
    skewness = float(mass_weights @ centered ** 3) / std ** 3
    kurtosis = float(mass_weights @ centered ** 4) / variance ** 2 - 3.0

    warnings = []
    if mass < 0.99:
        message = f"truncated support: density mass on [{lo}, {hi}] is {mass:.6f}"
        logger.warning(message)
        warnings.append(message)
    return MomentReport(
        mean=[mean],
        covariance=[[variance]],
        skewness=skewness,
        excess_kurtosis=kurtosis,
        warnings=warnings,
    )


def numeric_moments_mc(
    sampler: Callable[[np.random.Generator, int], np.ndarray],
    n: Optional[int] = None,
    seed: SeedLike = 0,
) -> MomentReport:
    """
    Sample mean and covariance from ``sampler(rng, n)``; skewness and excess
    kurtosis are added for one-dimensional samples.
    """
    n = n or settings.mc_samples
    if n < 1:
        raise ParameterError("sample size must be at least 1")
    samples = np.asarray(sampler(np.random.default_rng(seed), n), dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]

    mean = samples.mean(axis=0)
    centered = samples - mean
    covariance = centered.T @ centered / samples.shape[0]
    report = MomentReport(mean=mean.tolist(), covariance=covariance.tolist())
    if samples.shape[1] == 1:
        variance = covariance[0, 0]
        report.skewness = float(np.mean(centered[:, 0] ** 3) / variance ** 1.5)
        report.excess_kurtosis = float(np.mean(centered[:, 0] ** 4) / variance ** 2 - 3.0)
    return report
