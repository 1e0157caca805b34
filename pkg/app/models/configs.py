"""
Hyper-parameter models for estimators and parameter models for simulators.

Defaults follow the reference configuration used throughout the benchmarks:
two tanh hidden layers of 16 units, 1000 epochs of Adam at 1e-3 with
mini-batches of 200, noise regularization (0.2, 0.1) and data normalization.
"""

from typing import List, Literal, Optional, Tuple
from pydantic import BaseModel, ConfigDict, Field, model_validator


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid")


class NeuralConfig(_Config):
    """Settings shared by the two mixture networks."""
    hidden_sizes: Tuple[int, ...] = Field(default=(16, 16))
    epochs: int = Field(default=1000, ge=0)
    learning_rate: float = Field(default=1e-3, gt=0.0)
    batch_size: int = Field(default=200, ge=1)
    noise_std_x: float = Field(default=0.2, ge=0.0)
    noise_std_y: float = Field(default=0.1, ge=0.0)
    weight_norm: bool = True
    data_normalization: bool = True
    seed: int = 0

    @model_validator(mode="after")
    def _hidden(self):
        if any(size < 1 for size in self.hidden_sizes):
            raise ValueError("hidden layer sizes must be positive")
        return self


class MdnConfig(NeuralConfig):
    n_components: int = Field(default=20, ge=1)


class KmnConfig(NeuralConfig):
    """
    Kernel mixture network. ``n_components`` counts center x scale
    components, so 50 with two scale inits means 25 K-means centers.
    """
    n_components: int = Field(default=50, ge=1)
    init_scales: List[float] = Field(default_factory=lambda: [0.7, 0.3])
    train_scales: bool = True

    @model_validator(mode="after")
    def _scales(self):
        if not self.init_scales or any(s <= 0 for s in self.init_scales):
            raise ValueError("init_scales must be a nonempty list of positive values")
        if self.n_components % len(self.init_scales) != 0:
            raise ValueError("n_components must be divisible by the number of init_scales")
        return self

    @property
    def n_centers(self) -> int:
        return self.n_components // len(self.init_scales)


class CkdeConfig(_Config):
    mode: Literal["rule_of_thumb", "loo-cv"] = "rule_of_thumb"
    max_iter: int = Field(default=500, ge=1, description="Nelder-Mead iteration budget for loo-cv")


class NkdeConfig(_Config):
    epsilon: float = Field(default=0.4, gt=0.0)
    weighting: Literal["uniform", "distance"] = "uniform"
    mode: Literal["rule_of_thumb", "loo-cv"] = "rule_of_thumb"
    max_iter: int = Field(default=500, ge=1, description="Nelder-Mead iteration budget for loo-cv")


class LscdeConfig(_Config):
    n_centers: int = Field(default=500, ge=1)
    bandwidth: float = Field(default=0.5, gt=0.0)
    regularization: float = Field(default=0.1, gt=0.0)
    seed: int = 0


class OracleConfig(_Config):
    simulator: str
    params: dict = Field(default_factory=dict)
    seed: int = 0


# ---------------------------------------------------------------------------
# Simulator parameters
# ---------------------------------------------------------------------------

class EconParams(_Config):
    """Econ density has no free parameters."""


class ArmaJumpParams(_Config):
    c: float = 0.1
    arma_a1: float = Field(default=0.2, gt=-1.0, lt=1.0)
    jump_prob: float = Field(default=0.1, ge=0.0, le=1.0)
    std: float = Field(default=0.05, gt=0.0)
    burn_in: int = Field(default=100, ge=0)


class SkewNormalParams(_Config):
    """Location ``a*x + b``, scale ``c*x**2 + d`` and shape drifting between the alpha bounds."""
    a: float = 0.5
    b: float = 0.0
    c: float = Field(default=0.5, ge=0.0)
    d: float = Field(default=0.5, gt=0.0)
    alpha_low: float = -4.0
    alpha_high: float = 0.0


class FactorizedGmmParams(_Config):
    """
    Joint mixture with factorized components. When means are omitted they are
    drawn from ``seed``: means in [-3, 3], scales in [0.5, 1.5] and
    Dirichlet(1) weights.
    """
    n_components: int = Field(default=5, ge=1)
    ndim_x: int = Field(default=1, ge=1)
    ndim_y: int = Field(default=1, ge=1)
    weights: Optional[List[float]] = None
    means_x: Optional[List[List[float]]] = None
    scales_x: Optional[List[List[float]]] = None
    means_y: Optional[List[List[float]]] = None
    scales_y: Optional[List[List[float]]] = None
    seed: int = 0

    @model_validator(mode="after")
    def _shapes(self):
        given = [self.weights, self.means_x, self.scales_x, self.means_y, self.scales_y]
        if any(v is not None for v in given) and any(v is None for v in given):
            raise ValueError("explicit mixture parameters must be given all together")
        if self.weights is not None:
            k = len(self.weights)
            if any(w < 0 for w in self.weights) or sum(self.weights) <= 0:
                raise ValueError("weights must be nonnegative with positive sum")
            for name, rows, dim in (
                ("means_x", self.means_x, len(self.means_x[0]) if self.means_x else 0),
                ("scales_x", self.scales_x, len(self.means_x[0]) if self.means_x else 0),
                ("means_y", self.means_y, len(self.means_y[0]) if self.means_y else 0),
                ("scales_y", self.scales_y, len(self.means_y[0]) if self.means_y else 0),
            ):
                if len(rows) != k or dim == 0 or any(len(r) != dim for r in rows):
                    raise ValueError(f"{name} must have {k} rows of length {dim}")
            if any(s <= 0 for rows in (self.scales_x, self.scales_y) for r in rows for s in r):
                raise ValueError("scales must be positive")
            self.n_components = k
            self.ndim_x = len(self.means_x[0])
            self.ndim_y = len(self.means_y[0])
        return self
