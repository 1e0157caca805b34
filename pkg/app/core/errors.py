"""
Exception hierarchy shared by the estimators, the evaluation pipeline and the CLI.

Every error carries the process exit code the CLI reports for it:
2 for usage/configuration problems, 1 for runtime failures.
"""

from typing import Optional, Sequence


class CdeError(Exception):
    """Base class for all library errors."""

    exit_code: int = 1


class ConfigurationError(CdeError):
    """Invalid hyper-parameters, config files or command-line values."""

    exit_code = 2


class InputShapeError(CdeError):
    """Array dimensions do not match what the model or operation expects."""

    exit_code = 2


class UnsupportedDimensionError(CdeError):
    """Operation is only defined for a particular target dimension."""

    exit_code = 2


class CsvParseError(CdeError):
    """Malformed dataset CSV."""

    exit_code = 2

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class TrainingDivergenceError(CdeError):
    """Non-finite loss or gradient during optimization."""

    def __init__(self, message: str, batch_index: Optional[int] = None):
        if batch_index is not None:
            message = f"{message} (batch {batch_index})"
        super().__init__(message)
        self.batch_index = batch_index


class InvalidTransformError(CdeError):
    """Affine transform with a non-positive scale."""


class EstimatorStateError(CdeError):
    """Estimator used before it was fitted."""


class _QueryError(CdeError):
    def __init__(self, message: str, x: Optional[Sequence[float]] = None):
        if x is not None:
            message = f"{message} at x={list(map(float, x))}"
        super().__init__(message)
        self.x = None if x is None else [float(v) for v in x]


class KernelUnderflowError(_QueryError):
    """Marginal kernel density of the query x underflows."""


class NoNeighborsError(_QueryError):
    """Empty epsilon-neighborhood around the query x."""


class DegenerateDensityError(_QueryError):
    """Normalizer of a conditional density vanishes at the query x."""


class WeightUnderflowError(_QueryError):
    """All mixture-weight likelihoods underflow."""


class IllConditionedError(CdeError):
    """Linear system could not be solved."""


class ParameterError(CdeError):
    """Simulator or density parameters outside their valid range."""


class SimulatorDomainError(CdeError):
    """Conditional value outside the simulator's support."""


class OptimizerInitError(CdeError):
    """Objective is not finite at the optimizer's starting point."""


class InvalidDensityError(CdeError):
    """A density function returned negative values."""


class SearchFailureError(CdeError):
    """Every cell of a hyper-parameter search failed."""
