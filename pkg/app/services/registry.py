"""
Name lookup for estimators, the oracle wrapper around a simulator's true
conditional, and JSON model files.
"""

import logging
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Type, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from app.core.errors import ConfigurationError, EstimatorStateError
from app.models.configs import CkdeConfig, KmnConfig, LscdeConfig, MdnConfig, NkdeConfig, OracleConfig
from app.models.schemas import EstimatorDocument, EstimatorKind, MomentReport
from app.services.estimator import ConditionalDensityEstimator, Dataset, NormalizationStats
from app.services.gmm import GaussianMixture, gmm_closed_form_moments
from app.services.neural_cde import KernelMixtureNetwork, MixtureDensityNetwork
from app.services.nonparam_cde import ConditionalKernelDensity, LeastSquaresCde, NeighborKernelDensity
from app.services.simulators import DensitySimulator, build_simulator

logger = logging.getLogger(__name__)


class OracleEstimator(ConditionalDensityEstimator):
    """
    Wraps a simulator's true conditional density behind the estimator
    interface. It is fitted from construction; ``fit`` only checks dimensions.
    """

    kind = EstimatorKind.ORACLE

    def __init__(self, sim: DensitySimulator):
        super().__init__()
        self.sim = sim
        self._bind(NormalizationStats.identity(sim.x_dim, sim.y_dim), sim.x_dim, sim.y_dim)

    def fit(self, data: Dataset) -> "OracleEstimator":
        if data.x_dim != self.x_dim or data.y_dim != self.y_dim:
            raise ConfigurationError(
                f"oracle for {self.sim.name} expects ({self.x_dim}, {self.y_dim}) dimensions, "
                f"got ({data.x_dim}, {data.y_dim})"
            )
        return self

    def _normalized_conditional(self, x_norm: np.ndarray, x: np.ndarray) -> GaussianMixture:
        mixture = self.sim.conditional_mixture(x)
        if mixture is None:
            raise EstimatorStateError(f"the {self.sim.name} conditional is not a Gaussian mixture")
        return mixture

    def exact_mixture(self, x) -> Optional[GaussianMixture]:
        return self.sim.conditional_mixture(self._check_query(x))

    def log_pdf(self, x, y):
        return self.sim.conditional_log_pdf(self._check_query(x), y)

    def pdf(self, x, y):
        return self.sim.conditional_pdf(self._check_query(x), y)

    def support(self, x, width: float = 10.0) -> Tuple[np.ndarray, np.ndarray]:
        return self.sim.conditional_support(self._check_query(x), width)

    def moments(self, x) -> MomentReport:
        return self.sim.conditional_moments(self._check_query(x))

    def mean_std(self, x) -> Tuple[np.ndarray, np.ndarray]:
        mixture = self.exact_mixture(x)
        report = gmm_closed_form_moments(mixture) if mixture is not None else self.moments(x)
        return np.asarray(report.mean), np.sqrt(np.diag(np.asarray(report.covariance)))

    def config_dict(self) -> dict:
        return OracleConfig(
            simulator=self.sim.name, params=self.sim.params.model_dump(mode="json"), seed=self.sim.seed
        ).model_dump(mode="json")

    def _document_fields(self) -> dict:
        return {}

    @classmethod
    def from_document(cls, doc: EstimatorDocument) -> "OracleEstimator":
        cfg = OracleConfig(**doc.config)
        return cls(build_simulator(cfg.simulator, cfg.params, cfg.seed))


# name -> (estimator class, config model, forced overrides)
ESTIMATORS: Dict[str, Tuple[Type[ConditionalDensityEstimator], Type[BaseModel], Dict[str, Any]]] = {
    "mdn": (MixtureDensityNetwork, MdnConfig, {}),
    "kmn": (KernelMixtureNetwork, KmnConfig, {}),
    "ckde": (ConditionalKernelDensity, CkdeConfig, {}),
    "ckde_cv": (ConditionalKernelDensity, CkdeConfig, {"mode": "loo-cv"}),
    "nkde": (NeighborKernelDensity, NkdeConfig, {}),
    "nkde_cv": (NeighborKernelDensity, NkdeConfig, {"mode": "loo-cv"}),
    "lscde": (LeastSquaresCde, LscdeConfig, {}),
}

_LOADERS: Dict[EstimatorKind, Callable[[EstimatorDocument], ConditionalDensityEstimator]] = {
    EstimatorKind.MDN: MixtureDensityNetwork.from_document,
    EstimatorKind.KMN: KernelMixtureNetwork.from_document,
    EstimatorKind.CKDE: ConditionalKernelDensity.from_document,
    EstimatorKind.NKDE: NeighborKernelDensity.from_document,
    EstimatorKind.LSCDE: LeastSquaresCde.from_document,
    EstimatorKind.ORACLE: OracleEstimator.from_document,
}


def estimator_config(name: str, overrides: Optional[dict] = None) -> BaseModel:
    """Validated hyper-parameters for ``name`` with ``overrides`` applied."""
    if name not in ESTIMATORS:
        raise ConfigurationError(f"unknown estimator '{name}'; valid names: {', '.join(sorted(ESTIMATORS))}")
    _, config_model, forced = ESTIMATORS[name]
    try:
        return config_model(**{**(overrides or {}), **forced})
    except ValidationError as e:
        raise ConfigurationError(f"invalid {name} configuration: {e}") from e


def build_estimator(name: str, overrides: Optional[dict] = None) -> ConditionalDensityEstimator:
    """Unfitted estimator by registry name."""
    cls, _, _ = ESTIMATORS.get(name, (None, None, None))
    config = estimator_config(name, overrides)
    return cls(config)


def build_oracle(simulator: str, params: Optional[dict] = None, seed: int = 0) -> OracleEstimator:
    return OracleEstimator(build_simulator(simulator, params, seed))


def estimator_from_document(doc: EstimatorDocument) -> ConditionalDensityEstimator:
    return _LOADERS[doc.kind](doc)


def save_model(est: ConditionalDensityEstimator, path: Union[str, Path]) -> Path:
    """Write the estimator as a JSON model file."""
    path = Path(path)
    path.write_text(est.to_document().model_dump_json(indent=2), encoding="utf-8")
    logger.info(f"Saved {est.kind.value} model to {path}")
    return path


def load_model(path: Union[str, Path]) -> ConditionalDensityEstimator:
    """Read a JSON model file written by ``save_model``."""
    path = Path(path)
    try:
        doc = EstimatorDocument.model_validate_json(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigurationError(f"model file not found: {path}") from e
    except ValidationError as e:
        raise ConfigurationError(f"invalid model file {path}: {e}") from e
    return estimator_from_document(doc)
