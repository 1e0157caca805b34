"""
Pydantic models for reports, serialized documents and HTTP payloads.
"""

from typing import Optional, Dict, Any, List, Literal, Tuple
from pydantic import BaseModel, Field, field_validator, model_validator
from datetime import datetime, timezone
from enum import Enum


class EstimatorKind(str, Enum):
    """Kinds of fitted estimators."""
    MDN = "mdn"
    KMN = "kmn"
    CKDE = "ckde"
    NKDE = "nkde"
    LSCDE = "lscde"
    ORACLE = "oracle"


# ---------------------------------------------------------------------------
# Serialized numerical state
# ---------------------------------------------------------------------------

class NetworkLayerDocument(BaseModel):
    """One dense layer: direction matrix (row-major), gains and biases."""
    V: List[float] = Field(..., description="Weight directions, row-major (out x in)")
    g: Optional[List[float]] = Field(None, description="Per-output gains (weight normalization)")
    b: List[float] = Field(..., description="Biases")


class NetworkDocument(BaseModel):
    """Network parameters as stored in model files."""
    layer_sizes: List[int]
    weight_norm: bool = True
    layers: List[NetworkLayerDocument]


class MixtureDocument(BaseModel):
    """Gaussian mixture with diagonal covariances."""
    weights: List[float]
    means: List[List[float]]
    scales: List[List[float]]


class NormalizationDocument(BaseModel):
    """Empirical means and standard deviations used for data normalization."""
    mu_x: List[float]
    sigma_x: List[float]
    mu_y: List[float]
    sigma_y: List[float]


class EstimatorDocument(BaseModel):
    """Model file written by `cdebench fit`."""
    format_version: int = Field(default=1)
    kind: EstimatorKind
    config: Dict[str, Any] = Field(default_factory=dict, description="Echo of the fit configuration")
    x_dim: int
    y_dim: int
    stats: Optional[NormalizationDocument] = None
    network: Optional[NetworkDocument] = None
    centers: Optional[List[List[float]]] = None
    log_scales: Optional[List[float]] = None
    loss_history: List[float] = Field(default_factory=list)
    arrays: Dict[str, Any] = Field(default_factory=dict, description="Kind-specific arrays (kernel methods)")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

class MomentReport(BaseModel):
    """Conditional moments; skewness and kurtosis only for 1-D targets."""
    mean: List[float]
    covariance: List[List[float]]
    skewness: Optional[float] = None
    excess_kurtosis: Optional[float] = None
    warnings: List[str] = Field(default_factory=list)

    @property
    def variance(self) -> float:
        return self.covariance[0][0]

    @property
    def std(self) -> float:
        return self.covariance[0][0] ** 0.5


class EvalProtocol(BaseModel):
    """Conditional evaluation protocol on simulated densities."""
    n_x_points: int = Field(default=10, ge=1)
    percentile_range: Tuple[float, float] = Field(default=(0.1, 0.9))
    quadrature_points: int = Field(default=10000, ge=2)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    n_holdout: int = Field(default=1000, ge=1, description="Held-out samples for likelihood and RMSE metrics")

    @field_validator("percentile_range")
    @classmethod
    def _check_range(cls, value):
        lo, hi = value
        if not 0.0 < lo < hi < 1.0:
            raise ValueError("percentile range must satisfy 0 < lo < hi < 1")
        return value


class MetricsReport(BaseModel):
    """Goodness-of-fit metrics, optionally aggregated over seeds."""
    avg_log_likelihood: Optional[float] = None
    rmse_mean: Optional[float] = None
    rmse_std: Optional[float] = None
    hellinger_mean: Optional[float] = None
    per_seed: Dict[str, List[float]] = Field(default_factory=dict)
    seed_std: Dict[str, float] = Field(default_factory=dict)
    flags: List[str] = Field(default_factory=list)


class GridSearchSpec(BaseModel):
    """Grid of hyper-parameter values searched with k-fold cross-validation."""
    grid: Dict[str, List[Any]]
    folds: int = Field(default=10, ge=2)

    @field_validator("grid")
    @classmethod
    def _nonempty(cls, value):
        if not value or any(len(values) == 0 for values in value.values()):
            raise ValueError("grid must name at least one parameter and every value list must be nonempty")
        return value


class GridCell(BaseModel):
    """One evaluated grid cell."""
    key: str
    params: Dict[str, Any]
    fold_scores: List[float]
    score: float
    error: Optional[str] = None


class GridSearchResult(BaseModel):
    best_params: Dict[str, Any]
    best_score: float
    cells: List[GridCell]


# ---------------------------------------------------------------------------
# Benchmark configuration and records
# ---------------------------------------------------------------------------

class SimulatorSpec(BaseModel):
    name: str
    params: Dict[str, Any] = Field(default_factory=dict)


class EstimatorSpec(BaseModel):
    name: str
    label: Optional[str] = Field(None, description="Row label; defaults to the estimator name")
    config: Dict[str, Any] = Field(default_factory=dict)

    @property
    def display_name(self) -> str:
        return self.label or self.name


class BenchmarkConfig(BaseModel):
    """Benchmark grid: simulators x estimators x sample sizes x seeds."""
    schema_version: Literal[1] = 1
    mode: Literal["grid", "noise_sweep"] = "grid"
    simulators: List[SimulatorSpec]
    estimators: List[EstimatorSpec]
    sample_sizes: List[int] = Field(default_factory=lambda: [400, 800, 1600, 3200, 6000])
    n_seeds: int = Field(default=5, ge=1)
    master_seed: int = 0
    protocol: EvalProtocol = Field(default_factory=EvalProtocol)
    noise_grid: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2, 0.4])

    @model_validator(mode="after")
    def _check(self):
        if not self.simulators or not self.estimators:
            raise ValueError("benchmark needs at least one simulator and one estimator")
        if any(n < 50 for n in self.sample_sizes):
            raise ValueError("sample sizes must be at least 50")
        if self.mode == "noise_sweep" and not self.noise_grid:
            raise ValueError("noise sweep needs a nonempty noise grid")
        return self


class RunRecord(BaseModel):
    """One benchmark cell."""
    simulator: str
    estimator: str
    n_samples: int
    seed: int
    cell_seed: int
    eta_x: Optional[float] = None
    eta_y: Optional[float] = None
    hellinger: Optional[float] = None
    avg_ll: Optional[float] = None
    rmse_mean: Optional[float] = None
    rmse_std: Optional[float] = None
    wall_time: float = 0.0
    config_hash: str
    error: Optional[str] = None


# ---------------------------------------------------------------------------
# HTTP payloads
# ---------------------------------------------------------------------------

class GridSpec(BaseModel):
    lo: float
    hi: float
    n: int = Field(..., ge=2)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.hi > self.lo:
            raise ValueError("grid upper bound must exceed lower bound")
        return self


class DensityGridRequest(BaseModel):
    """Evaluate p(y|x) on an evenly spaced y-grid."""
    x: List[float] = Field(..., description="Conditional value")
    grid: GridSpec


class DensityGridResponse(BaseModel):
    x: List[float]
    y: List[float]
    pdf: List[float]


class MomentsRequest(BaseModel):
    x: List[float]


class RiskRequest(BaseModel):
    x: List[float]
    alpha: float = Field(default=0.01, gt=0.0, lt=1.0)


class RiskResponse(BaseModel):
    x: List[float]
    alpha: float
    value_at_risk: float
    expected_shortfall: float


class ModelInfoResponse(BaseModel):
    kind: EstimatorKind
    x_dim: int
    y_dim: int
    config: Dict[str, Any]


class HealthResponse(BaseModel):
    """Health check response model."""
    status: str = Field(..., description="Service status")
    version: str = Field(..., description="Application version")
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))


class ErrorResponse(BaseModel):
    """Error response model."""
    error: str = Field(..., description="Error type")
    message: str = Field(..., description="Error message")
    details: Optional[Dict[str, Any]] = Field(None, description="Additional error details")
    timestamp: datetime = Field(default_factory=lambda: datetime.now(timezone.utc))
