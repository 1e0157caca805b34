"""
Kernel baselines: conditional KDE (rule-of-thumb or leave-one-out
cross-validated bandwidths), epsilon-neighborhood KDE (same two bandwidth
modes) and least-squares conditional density estimation.

All three standardize the data with the same NormalizationStats machinery
as the neural estimators, so bandwidths are scale-free. Their conditionals
are exact Gaussian mixtures:

- CKDE: weights proportional to the x-kernels, means at the training y,
  scales ``h_y``.
- NKDE: weights over the epsilon-neighborhood, means at the neighbors' y,
  scales ``h``.
- LSCDE: weights proportional to ``alpha_l * phi_x_l(x)``, means at the
  y-centers, scale ``sigma``.
"""

import logging
from typing import Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from app.core.errors import (
    ConfigurationError,
    DegenerateDensityError,
    IllConditionedError,
    KernelUnderflowError,
    NoNeighborsError,
)
from app.models.configs import CkdeConfig, LscdeConfig, NkdeConfig
from app.models.schemas import EstimatorDocument, EstimatorKind
from app.services.estimator import SIGMA_FLOOR, ConditionalDensityEstimator, Dataset, NormalizationStats, normalize_fit
from app.services.evaluation import NelderMeadOptions, nelder_mead
from app.services.gmm import GaussianMixture

logger = logging.getLogger(__name__)

_LOG_2PI = np.log(2.0 * np.pi)
_LOG_MIN_DENSITY = np.log(1e-300)
_ROW_CHUNK = 512


def silverman_bandwidth(std: float, n: float, d: int) -> float:
    """Rule-of-thumb bandwidth ``1.06 * std * n ** (-1 / (4 + d))``."""
    if n < 1 or std <= 0:
        raise ConfigurationError(f"rule of thumb needs n >= 1 and std > 0, got n={n}, std={std}")
    return 1.06 * std * n ** (-1.0 / (4.0 + d))


def _column_std(values: np.ndarray) -> np.ndarray:
    return np.maximum(values.std(axis=0), SIGMA_FLOOR)


def _kernel_log_weights(points: np.ndarray, query: np.ndarray, bandwidth: np.ndarray) -> np.ndarray:
    z = (points - query) / bandwidth
    return -0.5 * np.sum(z * z, axis=1)


def _prune(log_w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    weights = np.exp(log_w - logsumexp(log_w))
    keep = np.flatnonzero(weights > 0)
    return keep, weights[keep] / weights[keep].sum()


# ---------------------------------------------------------------------------
# Conditional KDE
# ---------------------------------------------------------------------------

class ConditionalKernelDensity(ConditionalDensityEstimator):
    """Ratio of a joint product-Gaussian KDE to the marginal KDE of x."""

    kind = EstimatorKind.CKDE

    def __init__(self, config: Optional[CkdeConfig] = None):
        super().__init__()
        self.config = config or CkdeConfig()
        self.X: Optional[np.ndarray] = None
        self.Y: Optional[np.ndarray] = None
        self.h_x: Optional[np.ndarray] = None
        self.h_y: Optional[np.ndarray] = None

    @classmethod
    def with_bandwidths(cls, data: Dataset, h_x, h_y, stats: Optional[NormalizationStats] = None,
                        config: Optional[CkdeConfig] = None) -> "ConditionalKernelDensity":
        """Build a model with explicit bandwidths, given in normalized units."""
        est = cls(config)
        stats = stats or NormalizationStats.identity(data.x_dim, data.y_dim)
        normalized = stats.apply(data)
        est.X, est.Y = normalized.X, normalized.Y
        est.h_x = np.asarray(h_x, dtype=np.float64).ravel() * np.ones(data.x_dim)
        est.h_y = np.asarray(h_y, dtype=np.float64).ravel() * np.ones(data.y_dim)
        if np.any(est.h_x <= 0) or np.any(est.h_y <= 0):
            raise ConfigurationError("bandwidths must be positive")
        est._bind(stats, data.x_dim, data.y_dim)
        return est

    def fit(self, data: Dataset) -> "ConditionalKernelDensity":
        if len(data) < 2:
            raise ConfigurationError("CKDE needs at least two training rows")
        stats, train = normalize_fit(data)
        n, d = len(train), train.x_dim + train.y_dim
        h_x = np.array([silverman_bandwidth(s, n, d) for s in _column_std(train.X)])
        h_y = np.array([silverman_bandwidth(s, n, d) for s in _column_std(train.Y)])

        if self.config.mode == "loo-cv":
            h_x, h_y = self._cross_validate(train, h_x, h_y)
        self.X, self.Y, self.h_x, self.h_y = train.X, train.Y, h_x, h_y
        self._bind(stats, data.x_dim, data.y_dim)
        logger.info(f"CKDE ({self.config.mode}) bandwidths h_x={h_x.tolist()} h_y={h_y.tolist()}")
        return self

    def _cross_validate(self, train: Dataset, h_x: np.ndarray, h_y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        l = train.x_dim

        def objective(log_h: np.ndarray) -> float:
            value = loo_log_likelihood(train, np.exp(log_h[:l]), np.exp(log_h[l:]))
            return -value if np.isfinite(value) else np.inf

        start = np.log(np.concatenate([h_x, h_y]))
        best, value = nelder_mead(objective, start, NelderMeadOptions(max_iter=self.config.max_iter))
        logger.debug(f"CKDE leave-one-out log-likelihood {-objective(start):.6f} -> {-value:.6f}")
        return np.exp(best[:l]), np.exp(best[l:])

    def _normalized_conditional(self, x_norm: np.ndarray, x: np.ndarray) -> GaussianMixture:
        log_w = _kernel_log_weights(self.X, x_norm, self.h_x)
        log_marginal = (
            logsumexp(log_w) - np.log(self.X.shape[0])
            - np.sum(np.log(self.h_x)) - 0.5 * self.x_dim * _LOG_2PI
        )
        if log_marginal < _LOG_MIN_DENSITY:
            raise KernelUnderflowError("marginal kernel density of x underflows", x)
        keep, weights = _prune(log_w)
        return GaussianMixture(weights, self.Y[keep], np.tile(self.h_y, (keep.size, 1)))

    def config_dict(self) -> dict:
        return self.config.model_dump(mode="json")

    def _document_fields(self) -> dict:
        return {"arrays": {"X": self.X.tolist(), "Y": self.Y.tolist(),
                           "h_x": self.h_x.tolist(), "h_y": self.h_y.tolist()}}

    @classmethod
    def from_document(cls, doc: EstimatorDocument) -> "ConditionalKernelDensity":
        est = cls(CkdeConfig(**doc.config))
        arrays = doc.arrays
        est.X = np.asarray(arrays["X"], dtype=np.float64)
        est.Y = np.asarray(arrays["Y"], dtype=np.float64)
        est.h_x = np.asarray(arrays["h_x"], dtype=np.float64)
        est.h_y = np.asarray(arrays["h_y"], dtype=np.float64)
        est._bind(NormalizationStats.from_document(doc.stats), doc.x_dim, doc.y_dim)
        return est


def loo_log_likelihood(data: Dataset, h_x: np.ndarray, h_y: np.ndarray) -> float:
    """Sum over rows of the leave-one-out conditional log density."""
    X, Y = data.X, data.Y
    n = X.shape[0]
    log_norm_y = np.sum(np.log(h_y)) + 0.5 * Y.shape[1] * _LOG_2PI
    total = 0.0
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        zx = (X[start:stop, None, :] - X[None, :, :]) / h_x
        zy = (Y[start:stop, None, :] - Y[None, :, :]) / h_y
        log_kx = -0.5 * np.sum(zx * zx, axis=2)
        log_ky = -0.5 * np.sum(zy * zy, axis=2) - log_norm_y
        rows = np.arange(stop - start)
        log_kx[rows, start + rows] = -np.inf
        total += float(np.sum(logsumexp(log_kx + log_ky, axis=1) - logsumexp(log_kx, axis=1)))
    return total


def ckde_fit(data: Dataset, mode: str = "rule_of_thumb") -> ConditionalKernelDensity:
    return ConditionalKernelDensity(CkdeConfig(mode=mode)).fit(data)


def ckde_pdf(model: ConditionalKernelDensity, x, y) -> float:
    return float(model.pdf(x, y))


# ---------------------------------------------------------------------------
# Epsilon-neighborhood KDE
# ---------------------------------------------------------------------------

def neighbor_counts(X: np.ndarray, epsilon: float) -> np.ndarray:
    """Number of rows within Euclidean distance ``epsilon`` of each row, itself included."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    counts = np.empty(X.shape[0], dtype=np.int64)
    eps_sq = epsilon * epsilon
    for start in range(0, X.shape[0], _ROW_CHUNK):
        block = X[start:start + _ROW_CHUNK]
        dist_sq = np.sum((block[:, None, :] - X[None, :, :]) ** 2, axis=2)
        counts[start:start + _ROW_CHUNK] = np.sum(dist_sq <= eps_sq, axis=1)
    return counts


def nkde_effective_n(X: np.ndarray, epsilon: float) -> float:
    """Average neighborhood size minus one, floored at 1."""
    return max(1.0, float(np.mean(neighbor_counts(X, epsilon))) - 1.0)


class NeighborKernelDensity(ConditionalDensityEstimator):
    """KDE of y over the training points whose x lies within ``epsilon`` of the query."""

    kind = EstimatorKind.NKDE

    def __init__(self, config: Optional[NkdeConfig] = None):
        super().__init__()
        self.config = config or NkdeConfig()
        self.X: Optional[np.ndarray] = None
        self.Y: Optional[np.ndarray] = None
        self.bandwidth: Optional[np.ndarray] = None

    def fit(self, data: Dataset) -> "NeighborKernelDensity":
        stats, train = normalize_fit(data)
        n_eff = nkde_effective_n(train.X, self.config.epsilon)
        self.bandwidth = np.array([silverman_bandwidth(s, n_eff, train.y_dim) for s in _column_std(train.Y)])
        if self.config.mode == "loo-cv":
            self.bandwidth = self._cross_validate(train, self.bandwidth)
        self.X, self.Y = train.X, train.Y
        self._bind(stats, data.x_dim, data.y_dim)
        logger.info(
            f"NKDE ({self.config.mode}) epsilon={self.config.epsilon}: "
            f"effective n {n_eff:.3f}, h={self.bandwidth.tolist()}"
        )
        return self

    def _cross_validate(self, train: Dataset, start: np.ndarray) -> np.ndarray:
        cfg = self.config

        def objective(log_h: np.ndarray) -> float:
            value = nkde_loo_log_likelihood(train, cfg.epsilon, np.exp(log_h), cfg.weighting)
            return -value if np.isfinite(value) else np.inf

        best, value = nelder_mead(objective, np.log(start), NelderMeadOptions(max_iter=cfg.max_iter))
        logger.debug(f"NKDE leave-one-out log-likelihood {-objective(np.log(start)):.6f} -> {-value:.6f}")
        return np.exp(best)

    def _normalized_conditional(self, x_norm: np.ndarray, x: np.ndarray) -> GaussianMixture:
        dist = np.linalg.norm(self.X - x_norm, axis=1)
        neighbors = np.flatnonzero(dist <= self.config.epsilon)
        if neighbors.size == 0:
            raise NoNeighborsError(f"no training points within epsilon={self.config.epsilon}", x)
        if self.config.weighting == "distance" and np.sum(dist[neighbors]) > 0:
            weights = dist[neighbors] / np.sum(dist[neighbors])
        else:
            weights = np.full(neighbors.size, 1.0 / neighbors.size)
        return GaussianMixture(weights, self.Y[neighbors], np.tile(self.bandwidth, (neighbors.size, 1)))

    def config_dict(self) -> dict:
        return self.config.model_dump(mode="json")

    def _document_fields(self) -> dict:
        return {"arrays": {"X": self.X.tolist(), "Y": self.Y.tolist(), "bandwidth": self.bandwidth.tolist()}}

    @classmethod
    def from_document(cls, doc: EstimatorDocument) -> "NeighborKernelDensity":
        est = cls(NkdeConfig(**doc.config))
        est.X = np.asarray(doc.arrays["X"], dtype=np.float64)
        est.Y = np.asarray(doc.arrays["Y"], dtype=np.float64)
        est.bandwidth = np.asarray(doc.arrays["bandwidth"], dtype=np.float64)
        est._bind(NormalizationStats.from_document(doc.stats), doc.x_dim, doc.y_dim)
        return est


def nkde_loo_log_likelihood(data: Dataset, epsilon: float, bandwidth, weighting: str = "uniform") -> float:
    """
    Sum over rows of the leave-one-out NKDE log density, each row scored
    against the other training points in its epsilon-neighborhood. Rows
    with no other neighbor do not depend on the bandwidth and are skipped.
    """
    X, Y = data.X, data.Y
    h = np.asarray(bandwidth, dtype=np.float64).ravel()
    n = X.shape[0]
    log_norm_y = np.sum(np.log(h)) + 0.5 * Y.shape[1] * _LOG_2PI
    total = 0.0
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        rows = np.arange(stop - start)
        dist = np.sqrt(np.sum((X[start:stop, None, :] - X[None, :, :]) ** 2, axis=2))
        inside = dist <= epsilon
        inside[rows, start + rows] = False
        scored = inside.any(axis=1)
        if not np.any(scored):
            continue
        raw = inside.astype(np.float64)
        if weighting == "distance":
            weighted = np.where(inside, dist, 0.0)
            positive = weighted.sum(axis=1) > 0
            raw[positive] = weighted[positive]
        raw = raw[scored]
        with np.errstate(divide="ignore"):
            log_w = np.log(raw) - np.log(raw.sum(axis=1, keepdims=True))
        zy = (Y[start:stop][scored][:, None, :] - Y[None, :, :]) / h
        log_ky = -0.5 * np.sum(zy * zy, axis=2) - log_norm_y
        total += float(np.sum(logsumexp(log_w + log_ky, axis=1)))
    return total


def nkde_fit(data: Dataset, epsilon: float = 0.4, weighting: str = "uniform",
             mode: str = "rule_of_thumb") -> NeighborKernelDensity:
    return NeighborKernelDensity(NkdeConfig(epsilon=epsilon, weighting=weighting, mode=mode)).fit(data)


def nkde_pdf(model: NeighborKernelDensity, x, y) -> float:
    return float(model.pdf(x, y))


# ---------------------------------------------------------------------------
# Least-squares CDE
# ---------------------------------------------------------------------------

def _sq_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=2)


def lscde_design(X: np.ndarray, Y: np.ndarray, centers_x: np.ndarray, centers_y: np.ndarray,
                 sigma: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Empirical quadratic term ``H`` and linear term ``h`` of the squared-loss
    objective for Gaussian basis functions with a shared width ``sigma``.
    """
    n, m = X.shape[0], Y.shape[1]
    phi_x = np.exp(-_sq_dist(X, centers_x) / (2.0 * sigma ** 2))
    phi_y = np.exp(-_sq_dist(Y, centers_y) / (2.0 * sigma ** 2))
    overlap = (np.sqrt(np.pi) * sigma) ** m * np.exp(-_sq_dist(centers_y, centers_y) / (4.0 * sigma ** 2))
    H = (phi_x.T @ phi_x) / n * overlap
    h = np.mean(phi_x * phi_y, axis=0)
    return H, h


class LeastSquaresCde(ConditionalDensityEstimator):
    """Nonnegative Gaussian kernel expansion fitted by a damped least-squares solve."""

    kind = EstimatorKind.LSCDE

    def __init__(self, config: Optional[LscdeConfig] = None):
        super().__init__()
        self.config = config or LscdeConfig()
        self.centers_x: Optional[np.ndarray] = None
        self.centers_y: Optional[np.ndarray] = None
        self.alpha: Optional[np.ndarray] = None

    @property
    def sigma(self) -> float:
        return self.config.bandwidth

    @classmethod
    def from_parts(cls, centers_x, centers_y, alpha, config: Optional[LscdeConfig] = None,
                   stats: Optional[NormalizationStats] = None) -> "LeastSquaresCde":
        """Model from explicit centers and coefficients, given in normalized units."""
        est = cls(config)
        est.centers_x = np.atleast_2d(np.asarray(centers_x, dtype=np.float64))
        est.centers_y = np.atleast_2d(np.asarray(centers_y, dtype=np.float64))
        est.alpha = np.maximum(np.asarray(alpha, dtype=np.float64).ravel(), 0.0)
        x_dim, y_dim = est.centers_x.shape[1], est.centers_y.shape[1]
        est._bind(stats or NormalizationStats.identity(x_dim, y_dim), x_dim, y_dim)
        return est

    def fit(self, data: Dataset) -> "LeastSquaresCde":
        cfg = self.config
        stats, train = normalize_fit(data)
        n_centers = cfg.n_centers
        if n_centers > len(train):
            logger.warning(f"LSCDE asks for {n_centers} centers but only {len(train)} samples; clipping")
            n_centers = len(train)
        rng = np.random.default_rng(cfg.seed)
        idx = rng.choice(len(train), size=n_centers, replace=False)
        self.centers_x, self.centers_y = train.X[idx], train.Y[idx]

        H, h = lscde_design(train.X, train.Y, self.centers_x, self.centers_y, cfg.bandwidth)
        try:
            alpha = np.linalg.solve(H + cfg.regularization * np.eye(n_centers), h)
        except np.linalg.LinAlgError as e:
            raise IllConditionedError(
                f"LSCDE system is singular ({e}); increase regularization above {cfg.regularization}"
            )
        if not np.all(np.isfinite(alpha)):
            raise IllConditionedError(
                f"LSCDE solve produced non-finite coefficients; increase regularization above {cfg.regularization}"
            )
        self.alpha = np.maximum(alpha, 0.0)
        self._bind(stats, data.x_dim, data.y_dim)
        logger.info(f"LSCDE fitted {n_centers} centers, {np.count_nonzero(self.alpha)} active")
        return self

    def _normalized_conditional(self, x_norm: np.ndarray, x: np.ndarray) -> GaussianMixture:
        sigma = self.sigma
        phi_x = np.exp(-np.sum((self.centers_x - x_norm) ** 2, axis=1) / (2.0 * sigma ** 2))
        mass = self.alpha * phi_x
        normalizer = float(np.sum(mass)) * (np.sqrt(2.0 * np.pi) * sigma) ** self.y_dim
        if normalizer <= 1e-300:
            raise DegenerateDensityError("LSCDE normalizer vanishes", x)
        keep = np.flatnonzero(mass > 0)
        weights = mass[keep] / mass[keep].sum()
        return GaussianMixture(weights, self.centers_y[keep], np.full((keep.size, self.y_dim), sigma))

    def config_dict(self) -> dict:
        return self.config.model_dump(mode="json")

    def _document_fields(self) -> dict:
        return {"arrays": {"centers_x": self.centers_x.tolist(), "centers_y": self.centers_y.tolist(),
                           "alpha": self.alpha.tolist()}}

    @classmethod
    def from_document(cls, doc: EstimatorDocument) -> "LeastSquaresCde":
        return cls.from_parts(
            doc.arrays["centers_x"], doc.arrays["centers_y"], doc.arrays["alpha"],
            config=LscdeConfig(**doc.config), stats=NormalizationStats.from_document(doc.stats),
        )


def lscde_fit(data: Dataset, n_centers: int = 500, sigma: float = 0.5, regularization: float = 0.1,
              seed: int = 0) -> LeastSquaresCde:
    config = LscdeConfig(n_centers=n_centers, bandwidth=sigma, regularization=regularization, seed=seed)
    return LeastSquaresCde(config).fit(data)


def lscde_pdf(model: LeastSquaresCde, x, y) -> float:
    return float(model.pdf(x, y))
