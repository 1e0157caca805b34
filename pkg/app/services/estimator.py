"""
Shared estimator plumbing: datasets, normalization statistics and the
conditional density estimator interface every model implements.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from app.core.errors import ConfigurationError, EstimatorStateError, InputShapeError
from app.models.schemas import EstimatorDocument, EstimatorKind, MomentReport, NormalizationDocument
from app.services.gmm import GaussianMixture, gmm_closed_form_moments, gmm_linear_transform

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8


@dataclass
class Dataset:
    """Paired observations: ``X`` is ``(N, l)``, ``Y`` is ``(N, m)``."""

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64)
        Y = np.array(self.Y, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise InputShapeError(f"X {X.shape} and Y {Y.shape} must be 2-D with equal row counts")
        if X.shape[0] < 1:
            raise InputShapeError("dataset must contain at least one row")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InputShapeError("dataset contains non-finite values")
        self.X, self.Y = X, Y

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def x_dim(self) -> int:
        return self.X.shape[1]

    @property
    def y_dim(self) -> int:
        return self.Y.shape[1]

    def subset(self, index) -> "Dataset":
        return Dataset(self.X[index], self.Y[index])

    def head_fraction(self, fraction: float) -> "Dataset":
        """First ``floor(fraction * N)`` rows (chronological training split)."""
        if not 0.0 < fraction <= 1.0:
            raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
        count = max(1, int(np.floor(fraction * len(self))))
        return self.subset(slice(0, count))

    def tail_fraction(self, fraction: float) -> "Dataset":
        """Last ``ceil(fraction * N)`` rows (chronological test split)."""
        if not 0.0 < fraction <= 1.0:
            raise ConfigurationError(f"fraction must lie in (0, 1], got {fraction}")
        count = max(1, int(np.ceil(fraction * len(self))))
        return self.subset(slice(len(self) - count, len(self)))


@dataclass
class NormalizationStats:
    """Column means and population standard deviations of X and Y."""

    mu_x: np.ndarray
    sigma_x: np.ndarray
    mu_y: np.ndarray
    sigma_y: np.ndarray

    def __post_init__(self):
        for name in ("mu_x", "sigma_x", "mu_y", "sigma_y"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64).ravel())
        if not (np.all(self.sigma_x > 0) and np.all(self.sigma_y > 0)):
            raise InputShapeError("normalization standard deviations must be positive")

    @classmethod
    def identity(cls, x_dim: int, y_dim: int) -> "NormalizationStats":
        return cls(np.zeros(x_dim), np.ones(x_dim), np.zeros(y_dim), np.ones(y_dim))

    def normalize_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mu_x) / self.sigma_x

    def normalize_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.mu_y) / self.sigma_y

    def apply(self, data: Dataset) -> Dataset:
        return Dataset(self.normalize_x(data.X), self.normalize_y(data.Y))

    @property
    def log_jacobian_y(self) -> float:
        """``log prod(sigma_y)``, the log-density correction when mapping back."""
        return float(np.sum(np.log(self.sigma_y)))

    def to_document(self) -> NormalizationDocument:
        return NormalizationDocument(
            mu_x=self.mu_x.tolist(), sigma_x=self.sigma_x.tolist(),
            mu_y=self.mu_y.tolist(), sigma_y=self.sigma_y.tolist(),
        )

    @classmethod
    def from_document(cls, doc: NormalizationDocument) -> "NormalizationStats":
        return cls(doc.mu_x, doc.sigma_x, doc.mu_y, doc.sigma_y)


def _column_stats(values: np.ndarray, label: str) -> Tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    degenerate = std < SIGMA_FLOOR
    if np.any(degenerate):
        logger.warning(
            f"constant {label} column(s) {np.flatnonzero(degenerate).tolist()}: "
            f"standard deviation floored at {SIGMA_FLOOR}"
        )
        std = np.where(degenerate, SIGMA_FLOOR, std)
    return mean, std


def normalize_fit(data: Dataset) -> Tuple[NormalizationStats, Dataset]:
    """
    Estimate column means and standard deviations and standardize the data.

    Args:
        data: training data with at least two rows

    Returns:
        (stats, normalized dataset)
    """
    if len(data) < 2:
        raise ConfigurationError("normalization needs at least two rows")
    mu_x, sigma_x = _column_stats(data.X, "x")
    mu_y, sigma_y = _column_stats(data.Y, "y")
    stats = NormalizationStats(mu_x, sigma_x, mu_y, sigma_y)
    return stats, stats.apply(data)


class ConditionalDensityEstimator(ABC):
    """
    Base class for every estimator.

    Subclasses fit in normalized coordinates and return the conditional
    density there from ``_normalized_conditional``; this class maps queries
    in and mixtures back out through ``stats``.
    """

    kind: EstimatorKind

    def __init__(self):
        self.stats: Optional[NormalizationStats] = None
        self.x_dim: Optional[int] = None
        self.y_dim: Optional[int] = None

    @property
    def is_fitted(self) -> bool:
        return self.stats is not None

    @abstractmethod
    def fit(self, data: Dataset) -> "ConditionalDensityEstimator":
        ...

    @abstractmethod
    def _normalized_conditional(self, x_norm: np.ndarray, x: np.ndarray) -> GaussianMixture:
        """Conditional density of the normalized target at a normalized query ``x_norm``."""

    @abstractmethod
    def config_dict(self) -> dict:
        ...

    @abstractmethod
    def _document_fields(self) -> dict:
        ...

    def _check_query(self, x) -> np.ndarray:
        if not self.is_fitted:
            raise EstimatorStateError(f"{type(self).__name__} must be fitted before querying")
        x = np.asarray(x, dtype=np.float64).ravel()
        if x.size != self.x_dim:
            raise InputShapeError(f"query x has dimension {x.size}, estimator expects {self.x_dim}")
        return x

    def _bind(self, stats: NormalizationStats, x_dim: int, y_dim: int):
        self.stats = stats
        self.x_dim = x_dim
        self.y_dim = y_dim

    def conditional_density(self, x) -> GaussianMixture:
        """
        Conditional density ``p(y|x)`` as a mixture in the original units.

        Args:
            x: conditional value of length ``x_dim``

        Returns:
            GaussianMixture over ``y``
        """
        x = self._check_query(x)
        q = self._normalized_conditional(self.stats.normalize_x(x), x)
        return gmm_linear_transform(q, self.stats.mu_y, self.stats.sigma_y)

    def exact_mixture(self, x) -> Optional[GaussianMixture]:
        """The conditional as a mixture when it is one; None otherwise."""
        return self.conditional_density(x)

    def log_pdf(self, x, y) -> Union[float, np.ndarray]:
        return self.conditional_density(x).log_pdf(y)

    def pdf(self, x, y) -> Union[float, np.ndarray]:
        return np.exp(self.log_pdf(x, y))

    def _rows(self, X, Y) -> Tuple[np.ndarray, np.ndarray]:
        if not self.is_fitted:
            raise EstimatorStateError(f"{type(self).__name__} must be fitted before querying")
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        X = X[:, None] if X.ndim == 1 else X
        Y = Y[:, None] if Y.ndim == 1 else Y
        if X.shape[1:] != (self.x_dim,) or Y.shape[1:] != (self.y_dim,) or X.shape[0] != Y.shape[0]:
            raise InputShapeError(
                f"expected X (n, {self.x_dim}) and Y (n, {self.y_dim}), got {X.shape} and {Y.shape}"
            )
        return X, Y

    def log_pdf_rows(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """``log p(y_i | x_i)`` for paired rows."""
        X, Y = self._rows(X, Y)
        return np.array([self.log_pdf(x_row, y_row) for x_row, y_row in zip(X, Y)])

    def support(self, x, width: float = 10.0) -> Tuple[np.ndarray, np.ndarray]:
        return self.conditional_density(x).envelope(width, min_weight=1e-12)

    def mean_std(self, x) -> Tuple[np.ndarray, np.ndarray]:
        """Closed-form conditional mean and marginal standard deviations."""
        report = gmm_closed_form_moments(self.conditional_density(x))
        return np.asarray(report.mean), np.sqrt(np.diag(np.asarray(report.covariance)))

    def mean_std_rows(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """Conditional means and standard deviations for each row of ``X``, both ``(n, m)``."""
        X = np.asarray(X, dtype=np.float64)
        X = X[:, None] if X.ndim == 1 else X
        pairs = [self.mean_std(x) for x in X]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def moments(self, x) -> MomentReport:
        return gmm_closed_form_moments(self.conditional_density(x))

    def to_document(self) -> EstimatorDocument:
        if not self.is_fitted:
            raise EstimatorStateError("cannot serialize an unfitted estimator")
        return EstimatorDocument(
            kind=self.kind,
            config=self.config_dict(),
            x_dim=self.x_dim,
            y_dim=self.y_dim,
            stats=self.stats.to_document(),
            **self._document_fields(),
        )
