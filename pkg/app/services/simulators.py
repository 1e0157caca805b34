"""
Conditional density simulators with exact conditional densities.

Every simulator exposes a joint sampler, an x-marginal sampler, the true
conditional density and empirical percentiles of x. Three of the four
conditionals are Gaussian mixtures and are returned as such; the skew
normal conditional is evaluated directly.
"""

import logging
from abc import ABC, abstractmethod
from functools import cached_property
from typing import Dict, Optional, Tuple, Type, Union

import numpy as np
from pydantic import BaseModel
from scipy.special import erfc, expit, logsumexp
from scipy.stats import skewnorm

from app.core.errors import ConfigurationError, ParameterError, SimulatorDomainError, WeightUnderflowError
from app.models.configs import ArmaJumpParams, EconParams, FactorizedGmmParams, SkewNormalParams
from app.models.schemas import MomentReport
from app.services.estimator import Dataset
from app.services.gmm import GaussianMixture, gmm_closed_form_moments, gmm_sample, numeric_moments_1d

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
# Sub-stream of the simulator seed reserved for percentile reference draws.
PERCENTILE_STREAM = 7919
PERCENTILE_DRAWS = 100_000

SeedLike = Union[int, np.random.Generator, None]


def _normal_cdf(t: np.ndarray) -> np.ndarray:
    return 0.5 * erfc(-t / np.sqrt(2.0))


class DensitySimulator(ABC):
    """Base class; ``seed`` drives the default generator and the percentile draws."""

    name: str
    params_model: Type[BaseModel]
    x_dim: int = 1
    y_dim: int = 1

    def __init__(self, params: Optional[BaseModel] = None, seed: int = 0):
        self.params = params if params is not None else self.params_model()
        self.seed = seed

    def _rng(self, rng: SeedLike) -> np.random.Generator:
        return np.random.default_rng(self.seed if rng is None else rng)

    @abstractmethod
    def sample_joint(self, n: int, rng: SeedLike = None) -> Dataset:
        ...

    def sample_x(self, n: int, rng: SeedLike = None) -> np.ndarray:
        return self.sample_joint(n, rng).X

    @abstractmethod
    def conditional_mixture(self, x) -> Optional[GaussianMixture]:
        """True conditional as a mixture, or None when it is not one."""

    def _check_x(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.x_dim:
            raise ConfigurationError(f"{self.name} expects x of dimension {self.x_dim}, got {x.size}")
        return x

    def conditional_log_pdf(self, x, y) -> Union[float, np.ndarray]:
        return self.conditional_mixture(x).log_pdf(y)

    def conditional_pdf(self, x, y) -> Union[float, np.ndarray]:
        return np.exp(self.conditional_log_pdf(x, y))

    def conditional_support(self, x, width: float = 10.0) -> Tuple[np.ndarray, np.ndarray]:
        return self.conditional_mixture(x).envelope(width)

    def sample_conditional(self, x, n: int, rng: SeedLike = None) -> np.ndarray:
        """Exact draws from ``p(y|x)``, shape ``(n, y_dim)``."""
        return gmm_sample(self.conditional_mixture(x), self._rng(rng), n)

    def conditional_moments(self, x) -> MomentReport:
        """Closed-form mean and covariance; skewness and kurtosis by quadrature for scalar y."""
        mixture = self.conditional_mixture(x)
        report = gmm_closed_form_moments(mixture)
        if self.y_dim == 1:
            lo, hi = mixture.envelope(10.0)
            numeric = numeric_moments_1d(mixture.pdf, (lo[0], hi[0]))
            report.skewness, report.excess_kurtosis = numeric.skewness, numeric.excess_kurtosis
        return report

    @cached_property
    def _x_reference(self) -> np.ndarray:
        rng = np.random.default_rng((self.seed, PERCENTILE_STREAM))
        return np.sort(self.sample_x(PERCENTILE_DRAWS, rng), axis=0)

    def x_percentile(self, q: float) -> np.ndarray:
        """Empirical ``q``-quantile of each x column from 10^5 seeded draws."""
        if not 0.0 < q < 1.0:
            raise ConfigurationError(f"percentile must lie in (0, 1), got {q}")
        return np.quantile(self._x_reference, q, axis=0)


# ---------------------------------------------------------------------------
# EconDensity
# ---------------------------------------------------------------------------

def econ_pdf(x: float, y) -> Union[float, np.ndarray]:
    """``N(y | x**2, (1 + x)**2)`` for ``x >= 0``."""
    if x < 0:
        raise SimulatorDomainError(f"econ density needs x >= 0, got {x}")
    scale = 1.0 + x
    z = (np.asarray(y, dtype=np.float64) - x * x) / scale
    out = np.exp(-0.5 * z * z) / (scale * np.sqrt(2.0 * np.pi))
    return float(out) if np.ndim(out) == 0 else out


class EconDensity(DensitySimulator):
    """``x = |e_x|``, ``y = x**2 + (1 + x) e_y`` with standard normal noise."""

    name = "econ"
    params_model = EconParams

    def sample_joint(self, n: int, rng: SeedLike = None) -> Dataset:
        rng = self._rng(rng)
        x = np.abs(rng.standard_normal(n))
        y = x ** 2 + (1.0 + x) * rng.standard_normal(n)
        return Dataset(x[:, None], y[:, None])

    def conditional_mixture(self, x) -> GaussianMixture:
        x = float(self._check_x(x)[0])
        if x < 0:
            raise SimulatorDomainError(f"econ density needs x >= 0, got {x}")
        return GaussianMixture([1.0], [[x * x]], [[1.0 + x]])


def econ_sample(n: int, seed: SeedLike = 0) -> Dataset:
    return EconDensity().sample_joint(n, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# ArmaJump
# ---------------------------------------------------------------------------

def armajump_conditional(params: ArmaJumpParams, x_prev: float) -> GaussianMixture:
    """Two-component mixture: the AR(1) step and the jump step with a 3x wider shock."""
    c, a, p, s = params.c, params.arma_a1, params.jump_prob, params.std
    if p == 0.0:
        return GaussianMixture([1.0], [[c * (1.0 - a) + a * x_prev]], [[s]])
    if p == 1.0:
        return GaussianMixture([1.0], [[a * (x_prev - c)]], [[3.0 * s]])
    return GaussianMixture(
        [1.0 - p, p],
        [[c * (1.0 - a) + a * x_prev], [a * (x_prev - c)]],
        [[s], [3.0 * s]],
    )


class ArmaJump(DensitySimulator):
    """AR(1) series with Bernoulli jumps; pairs ``(x_{t-1}, x_t)`` from one chain."""

    name = "arma_jump"
    params_model = ArmaJumpParams

    def sample_joint(self, n: int, rng: SeedLike = None) -> Dataset:
        rng = self._rng(rng)
        p: ArmaJumpParams = self.params
        steps = p.burn_in + n + 1
        jumps = rng.random(steps) < p.jump_prob
        shocks = rng.standard_normal(steps)

        series = np.empty(steps + 1)
        series[0] = p.c
        for t in range(steps):
            drift = p.c * (1.0 - p.arma_a1) + p.arma_a1 * series[t]
            if jumps[t]:
                series[t + 1] = drift - p.c + 3.0 * p.std * shocks[t]
            else:
                series[t + 1] = drift + p.std * shocks[t]

        chain = series[p.burn_in + 1:]
        return Dataset(chain[:-1, None], chain[1:, None])

    def conditional_mixture(self, x) -> GaussianMixture:
        return armajump_conditional(self.params, float(self._check_x(x)[0]))


# ---------------------------------------------------------------------------
# SkewNormal
# ---------------------------------------------------------------------------

def _skew_parameters(params: SkewNormalParams, x: float) -> Tuple[float, float, float]:
    loc = params.a * x + params.b
    scale = params.c * x * x + params.d
    shape = params.alpha_low + expit(x) * (params.alpha_high - params.alpha_low)
    if scale <= 0:
        raise ParameterError(f"skew normal scale must be positive, got {scale} at x={x}")
    return loc, scale, shape


def skewnormal_pdf(params: SkewNormalParams, x: float, y) -> Union[float, np.ndarray]:
    """``2/w * phi((y - xi)/w) * Phi(alpha * (y - xi)/w)`` with x-dependent parameters."""
    loc, scale, shape = _skew_parameters(params, x)
    z = (np.asarray(y, dtype=np.float64) - loc) / scale
    out = 2.0 / scale * np.exp(-0.5 * z * z - 0.5 * _LOG_2PI) * _normal_cdf(shape * z)
    return float(out) if np.ndim(out) == 0 else out


class SkewNormal(DensitySimulator):
    """``x ~ N(0, 0.5**2)``; ``y | x`` skew normal with location, scale and shape driven by x."""

    name = "skew_normal"
    params_model = SkewNormalParams

    def sample_joint(self, n: int, rng: SeedLike = None) -> Dataset:
        rng = self._rng(rng)
        x = 0.5 * rng.standard_normal(n)
        p: SkewNormalParams = self.params
        loc = p.a * x + p.b
        scale = p.c * x * x + p.d
        shape = p.alpha_low + expit(x) * (p.alpha_high - p.alpha_low)
        y = skewnorm.rvs(shape, loc=loc, scale=scale, size=n, random_state=rng)
        return Dataset(x[:, None], np.asarray(y)[:, None])

    def conditional_mixture(self, x) -> None:
        return None

    def conditional_pdf(self, x, y) -> Union[float, np.ndarray]:
        return skewnormal_pdf(self.params, float(self._check_x(x)[0]), y)

    def conditional_log_pdf(self, x, y) -> Union[float, np.ndarray]:
        with np.errstate(divide="ignore"):
            return np.log(self.conditional_pdf(x, y))

    def conditional_support(self, x, width: float = 10.0) -> Tuple[np.ndarray, np.ndarray]:
        loc, scale, _ = _skew_parameters(self.params, float(self._check_x(x)[0]))
        return np.array([loc - width * scale]), np.array([loc + width * scale])

    def sample_conditional(self, x, n: int, rng: SeedLike = None) -> np.ndarray:
        loc, scale, shape = _skew_parameters(self.params, float(self._check_x(x)[0]))
        return np.asarray(skewnorm.rvs(shape, loc=loc, scale=scale, size=n, random_state=self._rng(rng)))[:, None]

    def conditional_moments(self, x) -> MomentReport:
        lo, hi = self.conditional_support(x)
        return numeric_moments_1d(lambda y: self.conditional_pdf(x, y), (lo[0], hi[0]))


# ---------------------------------------------------------------------------
# Factorized Gaussian mixture
# ---------------------------------------------------------------------------

class FactorizedGmm(DensitySimulator):
    """Joint mixture whose components factorize into independent x and y Gaussians."""

    name = "gaussian_mixture"
    params_model = FactorizedGmmParams

    def __init__(self, params: Optional[FactorizedGmmParams] = None, seed: int = 0):
        super().__init__(params, seed)
        p: FactorizedGmmParams = self.params
        if p.weights is None:
            rng = np.random.default_rng(p.seed)
            k = p.n_components
            self.weights = rng.dirichlet(np.ones(k))
            self.means_x = rng.uniform(-3.0, 3.0, size=(k, p.ndim_x))
            self.scales_x = rng.uniform(0.5, 1.5, size=(k, p.ndim_x))
            self.means_y = rng.uniform(-3.0, 3.0, size=(k, p.ndim_y))
            self.scales_y = rng.uniform(0.5, 1.5, size=(k, p.ndim_y))
        else:
            self.weights = np.asarray(p.weights, dtype=np.float64) / np.sum(p.weights)
            self.means_x = np.asarray(p.means_x, dtype=np.float64)
            self.scales_x = np.asarray(p.scales_x, dtype=np.float64)
            self.means_y = np.asarray(p.means_y, dtype=np.float64)
            self.scales_y = np.asarray(p.scales_y, dtype=np.float64)
        self.x_dim = self.means_x.shape[1]
        self.y_dim = self.means_y.shape[1]

    def sample_joint(self, n: int, rng: SeedLike = None) -> Dataset:
        rng = self._rng(rng)
        k = rng.choice(self.weights.size, size=n, p=self.weights)
        x = self.means_x[k] + self.scales_x[k] * rng.standard_normal((n, self.x_dim))
        y = self.means_y[k] + self.scales_y[k] * rng.standard_normal((n, self.y_dim))
        return Dataset(x, y)

    def conditional_weights(self, x) -> np.ndarray:
        x = self._check_x(x)
        z = (x - self.means_x) / self.scales_x
        with np.errstate(divide="ignore"):
            log_w = (
                np.log(self.weights) - 0.5 * np.sum(z * z, axis=1)
                - np.sum(np.log(self.scales_x), axis=1) - 0.5 * self.x_dim * _LOG_2PI
            )
        total = logsumexp(log_w)
        if not np.isfinite(total):
            raise WeightUnderflowError("all component likelihoods underflow", x)
        return np.exp(log_w - total)

    def conditional_mixture(self, x) -> GaussianMixture:
        return GaussianMixture(self.conditional_weights(x), self.means_y, self.scales_y)


def factorized_gmm_conditional(sim: FactorizedGmm, x) -> GaussianMixture:
    return sim.conditional_mixture(x)


def x_percentile(sim: DensitySimulator, q: float) -> np.ndarray:
    return sim.x_percentile(q)


SIMULATORS: Dict[str, Type[DensitySimulator]] = {
    EconDensity.name: EconDensity,
    ArmaJump.name: ArmaJump,
    SkewNormal.name: SkewNormal,
    FactorizedGmm.name: FactorizedGmm,
}


def build_simulator(name: str, params: Optional[dict] = None, seed: int = 0) -> DensitySimulator:
    """
    Instantiate a simulator by name.

    Raises:
        ConfigurationError: unknown name or invalid parameters
    """
    if name not in SIMULATORS:
        raise ConfigurationError(f"unknown simulator '{name}'; valid names: {', '.join(sorted(SIMULATORS))}")
    cls = SIMULATORS[name]
    try:
        parsed = cls.params_model(**(params or {}))
    except ValueError as e:
        raise ConfigurationError(f"invalid parameters for simulator '{name}': {e}")
    return cls(parsed, seed=seed)
