"""Models module for configuration, report and document schemas."""

from .configs import (
    MdnConfig,
    KmnConfig,
    CkdeConfig,
    NkdeConfig,
    LscdeConfig,
    OracleConfig,
    EconParams,
    ArmaJumpParams,
    SkewNormalParams,
    FactorizedGmmParams,
)
from .schemas import (
    EstimatorKind,
    EstimatorDocument,
    MixtureDocument,
    MomentReport,
    EvalProtocol,
    MetricsReport,
    GridSearchSpec,
    GridSearchResult,
    BenchmarkConfig,
    RunRecord,
    HealthResponse,
    ErrorResponse,
)

__all__ = [
    "MdnConfig",
    "KmnConfig",
    "CkdeConfig",
    "NkdeConfig",
    "LscdeConfig",
    "OracleConfig",
    "EconParams",
    "ArmaJumpParams",
    "SkewNormalParams",
    "FactorizedGmmParams",
    "EstimatorKind",
    "EstimatorDocument",
    "MixtureDocument",
    "MomentReport",
    "EvalProtocol",
    "MetricsReport",
    "GridSearchSpec",
    "GridSearchResult",
    "BenchmarkConfig",
    "RunRecord",
    "HealthResponse",
    "ErrorResponse",
]
