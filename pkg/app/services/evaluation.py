"""
Goodness-of-fit metrics, the conditional evaluation protocol on simulated
densities, k-fold grid search and the Nelder-Mead optimizer.
"""

import itertools
import json
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.core.errors import (
    CdeError,
    ConfigurationError,
    InvalidDensityError,
    OptimizerInitError,
    SearchFailureError,
    UnsupportedDimensionError,
)
from app.models.schemas import EvalProtocol, GridCell, GridSearchResult, GridSearchSpec, MetricsReport
from app.services.estimator import Dataset
from app.services.gmm import gauss_legendre

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Nelder-Mead
# ---------------------------------------------------------------------------

@dataclass
class NelderMeadOptions:
    max_iter: int = 500
    ftol: float = 1e-8
    reflection: float = 1.0
    expansion: float = 2.0
    contraction: float = 0.5
    shrink: float = 0.5
    initial_step: float = 0.05
    zero_step: float = 0.00025


def nelder_mead(objective: Callable[[np.ndarray], float], start,
                options: Optional[NelderMeadOptions] = None) -> Tuple[np.ndarray, float]:
    """
    Minimize ``objective`` with the downhill simplex method.

    The initial simplex perturbs each coordinate by 5% (or 0.00025 when it is
    zero). Iteration stops once the spread of the simplex values falls below
    ``ftol`` or after ``max_iter`` iterations.

    Returns:
        (argmin, value); the value is never worse than at ``start``
    """
    opts = options or NelderMeadOptions()

    def evaluate(point: np.ndarray) -> float:
        value = float(objective(point))
        return value if not np.isnan(value) else np.inf

    x0 = np.asarray(start, dtype=np.float64).ravel()
    f0 = evaluate(x0)
    if not np.isfinite(f0):
        raise OptimizerInitError(f"objective is not finite at the starting point {x0.tolist()}")

    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    for i in range(n):
        simplex[i + 1, i] = x0[i] * (1.0 + opts.initial_step) if x0[i] != 0 else opts.zero_step
    values = np.array([f0] + [evaluate(p) for p in simplex[1:]])

    for _ in range(opts.max_iter):
        order = np.argsort(values, kind="stable")
        simplex, values = simplex[order], values[order]
        if values[-1] - values[0] < opts.ftol:
            break

        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        reflected = centroid + opts.reflection * (centroid - worst)
        f_reflected = evaluate(reflected)

        if f_reflected < values[0]:
            expanded = centroid + opts.expansion * (reflected - centroid)
            f_expanded = evaluate(expanded)
            if f_expanded < f_reflected:
                simplex[-1], values[-1] = expanded, f_expanded
            else:
                simplex[-1], values[-1] = reflected, f_reflected
            continue
        if f_reflected < values[-2]:
            simplex[-1], values[-1] = reflected, f_reflected
            continue

        if f_reflected < values[-1]:
            contracted = centroid + opts.contraction * (reflected - centroid)
            f_contracted = evaluate(contracted)
            accept = f_contracted <= f_reflected
        else:
            contracted = centroid + opts.contraction * (worst - centroid)
            f_contracted = evaluate(contracted)
            accept = f_contracted < values[-1]
        if accept:
            simplex[-1], values[-1] = contracted, f_contracted
            continue

        best = simplex[0]
        for j in range(1, n + 1):
            simplex[j] = best + opts.shrink * (simplex[j] - best)
            values[j] = evaluate(simplex[j])

    index = int(np.argmin(values))
    return simplex[index].copy(), float(values[index])


# ---------------------------------------------------------------------------
# Hellinger distance
# ---------------------------------------------------------------------------

def hellinger_1d(p: Callable[[np.ndarray], np.ndarray], q: Callable[[np.ndarray], np.ndarray],
                 support: Tuple[float, float], n_points: Optional[int] = None) -> float:
    """
    Hellinger distance between two 1-D densities by Gauss-Legendre quadrature.

    This uses the squared-difference form: ``H**2`` is the integral of
    ``0.5 * (sqrt(p) - sqrt(q))**2``, not ``1 - integral(sqrt(p*q))``. The
    two agree for densities with unit mass on ``support``; otherwise they
    differ by half the mass deficit. The form used stays nonnegative and is
    exactly zero for identical inputs.
    """
    nodes, weights = gauss_legendre(float(support[0]), float(support[1]), n_points)
    p_values = np.asarray(p(nodes), dtype=np.float64)
    q_values = np.asarray(q(nodes), dtype=np.float64)
    if np.any(p_values < 0) or np.any(q_values < 0):
        raise InvalidDensityError("density evaluated to a negative value")
    h_sq = 0.5 * float(np.dot(weights, (np.sqrt(p_values) - np.sqrt(q_values)) ** 2))
    return float(np.clip(np.sqrt(max(h_sq, 0.0)), 0.0, 1.0))


def x_grid(sim, protocol: EvalProtocol) -> np.ndarray:
    """Evenly spaced x-values between the protocol's percentiles, shape ``(n_x_points, l)``."""
    lo = np.atleast_1d(sim.x_percentile(protocol.percentile_range[0]))
    hi = np.atleast_1d(sim.x_percentile(protocol.percentile_range[1]))
    steps = np.linspace(0.0, 1.0, protocol.n_x_points)[:, None]
    return lo + steps * (hi - lo)


def conditional_hellinger(est, sim, protocol: Optional[EvalProtocol] = None) -> float:
    """Mean Hellinger distance between estimated and true conditionals over the x-grid."""
    protocol = protocol or EvalProtocol()
    if sim.y_dim != 1 or est.y_dim != 1:
        raise UnsupportedDimensionError("Hellinger evaluation needs one-dimensional targets")
    if est.x_dim != sim.x_dim:
        raise ConfigurationError(f"estimator x dimension {est.x_dim} does not match simulator {sim.x_dim}")

    distances = []
    for x in x_grid(sim, protocol):
        try:
            est_lo, est_hi = est.support(x)
            sim_lo, sim_hi = sim.conditional_support(x)
            support = (min(est_lo[0], sim_lo[0]), max(est_hi[0], sim_hi[0]))
            distances.append(hellinger_1d(
                lambda y: est.pdf(x, y), lambda y: sim.conditional_pdf(x, y),
                support, protocol.quadrature_points,
            ))
        except CdeError as e:
            logger.error(f"Hellinger evaluation failed at x={x.tolist()}: {e}")
            raise
    return float(np.mean(distances))


# ---------------------------------------------------------------------------
# Likelihood and moment metrics
# ---------------------------------------------------------------------------

def avg_log_likelihood(est, data: Dataset) -> float:
    """Mean conditional log density; ``-inf`` is returned (and logged) rather than raised."""
    with np.errstate(divide="ignore"):
        values = est.log_pdf_rows(data.X, data.Y)
    result = float(np.mean(values))
    if np.isneginf(result):
        logger.warning(f"zero density at {int(np.sum(np.isneginf(values)))} of {len(values)} points")
    return result


def _moment_residuals(est, data: Dataset) -> Tuple[np.ndarray, np.ndarray]:
    if data.y_dim != 1:
        raise UnsupportedDimensionError("moment RMSEs need one-dimensional targets")
    means, stds = est.mean_std_rows(data.X)
    residual = data.Y[:, 0] - means[:, 0]
    return residual, stds[:, 0]


def rmse_mean(est, data: Dataset) -> float:
    residual, _ = _moment_residuals(est, data)
    return float(np.sqrt(np.mean(residual ** 2)))


def rmse_std(est, data: Dataset) -> float:
    residual, stds = _moment_residuals(est, data)
    return float(np.sqrt(np.mean((np.abs(residual) - stds) ** 2)))


def evaluate_on_dataset(est, data: Dataset) -> MetricsReport:
    """Log-likelihood and, for one-dimensional targets, both moment RMSEs."""
    report = MetricsReport()
    report.avg_log_likelihood = avg_log_likelihood(est, data)
    if np.isneginf(report.avg_log_likelihood):
        report.flags.append("avg_log_likelihood=-inf")
    if data.y_dim == 1:
        residual, stds = _moment_residuals(est, data)
        report.rmse_mean = float(np.sqrt(np.mean(residual ** 2)))
        report.rmse_std = float(np.sqrt(np.mean((np.abs(residual) - stds) ** 2)))
    else:
        report.flags.append("rmse skipped: multivariate targets")
    return report


def evaluate_on_simulator(est, sim, protocol: Optional[EvalProtocol] = None, seed: int = 0) -> MetricsReport:
    """Dataset metrics on fresh simulator draws plus the conditional Hellinger distance."""
    protocol = protocol or EvalProtocol()
    holdout = sim.sample_joint(protocol.n_holdout, np.random.default_rng(seed))
    report = evaluate_on_dataset(est, holdout)
    report.hellinger_mean = conditional_hellinger(est, sim, protocol)
    return report


_METRIC_FIELDS = ("avg_log_likelihood", "rmse_mean", "rmse_std", "hellinger_mean")


def aggregate_reports(reports: Sequence[MetricsReport]) -> MetricsReport:
    """Average per-seed reports; keeps the per-seed values and their population std."""
    combined = MetricsReport()
    for name in _METRIC_FIELDS:
        values = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        if not values:
            continue
        combined.per_seed[name] = values
        setattr(combined, name, float(np.mean(values)))
        combined.seed_std[name] = float(np.std(values))
    combined.flags = sorted({flag for r in reports for flag in r.flags})
    return combined


def evaluate_across_seeds(
    estimator_factory: Callable[[int], Any],
    sim,
    n_samples: int,
    protocol: Optional[EvalProtocol] = None,
) -> MetricsReport:
    """
    Fit one estimator per protocol seed on ``n_samples`` simulator draws and
    aggregate the simulator metrics.

    Args:
        estimator_factory: builds an unfitted estimator from a seed
        sim: the data-generating simulator
        n_samples: training sample size
        protocol: evaluation protocol (seeds, x-grid, quadrature)
    """
    protocol = protocol or EvalProtocol()
    reports = []
    for seed in protocol.seeds:
        train = sim.sample_joint(n_samples, np.random.default_rng(seed))
        est = estimator_factory(seed).fit(train)
        reports.append(evaluate_on_simulator(est, sim, protocol, seed=seed + 10_000))
    return aggregate_reports(reports)


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------

def kfold_indices(n: int, folds: int, seed: int) -> List[np.ndarray]:
    """One seeded shuffle, then contiguous blocks."""
    if n < folds:
        raise ConfigurationError(f"need at least {folds} rows for {folds}-fold cross-validation, got {n}")
    permutation = np.random.default_rng(seed).permutation(n)
    return np.array_split(permutation, folds)


def _cell_key(params: Dict[str, Any]) -> str:
    return json.dumps(params, sort_keys=True)


def grid_search_cv(
    spec: GridSearchSpec,
    estimator_factory: Callable[[Dict[str, Any]], Any],
    data: Dataset,
    seed: int = 0,
) -> GridSearchResult:
    """
    Exhaustive grid search scored by mean held-out log-likelihood.

    Ties go to the earliest cell in grid order. Cells whose fits fail score
    ``-inf`` and carry the error message.
    """
    folds = kfold_indices(len(data), spec.folds, seed)
    names = list(spec.grid)
    cells: List[GridCell] = []

    for values in itertools.product(*(spec.grid[name] for name in names)):
        params = dict(zip(names, values))
        scores, error = [], None
        for k, held_out in enumerate(folds):
            train_idx = np.concatenate([f for j, f in enumerate(folds) if j != k])
            try:
                est = estimator_factory(params).fit(data.subset(train_idx))
                scores.append(avg_log_likelihood(est, data.subset(held_out)))
            except CdeError as e:
                logger.warning(f"grid cell {params} fold {k} failed: {e}")
                scores.append(-np.inf)
                error = str(e)
        score = float(np.mean(scores))
        cells.append(GridCell(key=_cell_key(params), params=params, fold_scores=scores, score=score, error=error))
        logger.info(f"grid cell {params}: mean held-out log-likelihood {score:.6f}")

    finite = [c for c in cells if np.isfinite(c.score)]
    if not finite:
        raise SearchFailureError("every grid cell failed or scored -inf")
    best = max(finite, key=lambda c: c.score)
    return GridSearchResult(best_params=best.params, best_score=best.score, cells=cells)
