"""
Command-line entry point: simulate, fit, eval, benchmark, density, cv, serve.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
from pydantic import ValidationError

from app.core.config import settings
from app.core.errors import CdeError, ConfigurationError, InputShapeError, UnsupportedDimensionError
from app.models.schemas import BenchmarkConfig, EvalProtocol, GridSearchSpec
from app.services.benchmark import BenchmarkRunner, write_benchmark
from app.services.evaluation import evaluate_on_dataset, evaluate_on_simulator, grid_search_cv
from app.services.registry import ESTIMATORS, build_estimator, build_oracle, estimator_config, load_model, save_model
from app.services.simulators import SIMULATORS, build_simulator
from app.utils.logging import setup_logging
from app.utils.tabular import read_dataset, write_dataset, write_records

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Argument helpers
# ---------------------------------------------------------------------------

def _json_argument(value: Optional[str], what: str) -> dict:
    """Inline JSON object or a path to a JSON file."""
    if not value:
        return {}
    text = value if value.lstrip().startswith("{") else None
    if text is None:
        path = Path(value)
        if not path.is_file():
            raise ConfigurationError(f"{what} is neither inline JSON nor an existing file: {value}")
        text = path.read_text(encoding="utf-8")
    try:
        parsed = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{what} is not valid JSON: {e}") from e
    if not isinstance(parsed, dict):
        raise ConfigurationError(f"{what} must be a JSON object")
    return parsed


def parse_grid(value: str):
    """``lo:hi:n`` into an evenly spaced grid with at least two points."""
    parts = value.split(":")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except (IndexError, ValueError) as e:
        raise ConfigurationError(f"grid must look like lo:hi:n, got '{value}'") from e
    if len(parts) != 3 or n < 2 or not hi > lo:
        raise ConfigurationError(f"grid needs hi > lo and n >= 2, got '{value}'")
    return np.linspace(lo, hi, n)


def parse_queries(values: List[str], x_dim: int) -> List[np.ndarray]:
    """Each token is one query; vector queries are comma separated."""
    queries = []
    for token in values:
        try:
            x = np.array([float(v) for v in token.split(",")])
        except ValueError as e:
            raise ConfigurationError(f"cannot parse x value '{token}'") from e
        if x.size != x_dim:
            raise InputShapeError(f"x value '{token}' has dimension {x.size}, model expects {x_dim}")
        queries.append(x)
    return queries


def _write_json(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _check_dims(est, data):
    if est.x_dim != data.x_dim or est.y_dim != data.y_dim:
        raise InputShapeError(
            f"model expects ({est.x_dim}, {est.y_dim}) dimensions, data has ({data.x_dim}, {data.y_dim})"
        )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.n < 1:
        raise ConfigurationError(f"--n must be at least 1, got {args.n}")
    sim = build_simulator(args.sim, _json_argument(args.params_file, "--params-file"), seed=args.seed)
    data = sim.sample_joint(args.n, np.random.default_rng(args.seed))
    rows = write_dataset(args.out, data)
    print(f"{rows} rows written to {args.out}")
    return 0


def cmd_fit(args) -> int:
    data = None
    if args.data:
        data = read_dataset(args.data, n_targets=args.n_targets).head_fraction(args.train_fraction)

    if args.estimator == "oracle":
        if not args.sim:
            raise ConfigurationError("--estimator oracle needs --sim")
        est = build_oracle(args.sim, _json_argument(args.params_file, "--params-file"), seed=args.seed or 0)
        if data is not None:
            est.fit(data)
    else:
        if data is None:
            raise ConfigurationError(f"--estimator {args.estimator} needs --data")
        overrides = _json_argument(args.config, "--config")
        if args.seed is not None and "seed" in type(estimator_config(args.estimator, overrides)).model_fields:
            overrides["seed"] = args.seed
        logger.info(f"Fitting {args.estimator} on {len(data)} rows from {args.data}")
        est = build_estimator(args.estimator, overrides).fit(data)

    save_model(est, args.model_out)
    print(f"{est.kind.value} model written to {args.model_out}")
    return 0


def cmd_eval(args) -> int:
    est = load_model(args.model)
    if bool(args.data) == bool(args.sim):
        raise ConfigurationError("give exactly one of --data and --sim")

    if args.data:
        data = read_dataset(args.data, n_targets=args.n_targets).tail_fraction(args.test_fraction)
        _check_dims(est, data)
        report = evaluate_on_dataset(est, data)
    else:
        sim = build_simulator(args.sim, _json_argument(args.params_file, "--params-file"), seed=args.seed)
        if est.x_dim != sim.x_dim or est.y_dim != sim.y_dim:
            raise InputShapeError(
                f"model expects ({est.x_dim}, {est.y_dim}) dimensions, "
                f"simulator {args.sim} has ({sim.x_dim}, {sim.y_dim})"
            )
        protocol = EvalProtocol(n_holdout=args.n_holdout, n_x_points=args.n_x_points)
        report = evaluate_on_simulator(est, sim, protocol, seed=args.seed)

    _write_json(report.model_dump_json(indent=2, exclude_defaults=True), args.out)
    return 0


def cmd_benchmark(args) -> int:
    path = Path(args.config)
    if not path.is_file():
        raise ConfigurationError(f"benchmark config not found: {path}")
    config = BenchmarkConfig.model_validate_json(path.read_text(encoding="utf-8"))
    records = BenchmarkRunner(config).run(parallel=args.parallel)
    out, aggregate = write_benchmark(records, Path(args.out))
    failed = sum(r.error is not None for r in records)
    print(f"{len(records)} cells ({failed} failed) written to {out}; aggregates in {aggregate}")
    return 0 if failed < len(records) else 1


def cmd_density(args) -> int:
    est = load_model(args.model)
    if est.y_dim != 1:
        raise UnsupportedDimensionError("density export needs one-dimensional targets")
    grid = parse_grid(args.grid)
    queries = parse_queries(args.x, est.x_dim)

    def rows():
        for x in queries:
            pdf = np.atleast_1d(est.pdf(x, grid))
            for y, p in zip(grid, pdf):
                yield [*x.tolist(), float(y), float(p)]

    header = [f"x_{i}" for i in range(est.x_dim)] + ["y", "pdf"]
    count = write_records(args.out, header, rows())
    print(f"{count} rows written to {args.out}")
    return 0


def cmd_cv(args) -> int:
    base = _json_argument(args.config, "--config")
    spec = GridSearchSpec(grid=_json_argument(args.grid, "--grid"), folds=args.folds)
    data = read_dataset(args.data, n_targets=args.n_targets)
    for name in spec.grid:
        estimator_config(args.estimator, {**base, name: spec.grid[name][0]})

    result = grid_search_cv(spec, lambda params: build_estimator(args.estimator, {**base, **params}), data, seed=args.seed)
    _write_json(result.model_dump_json(indent=2), args.out)
    if args.csv:
        names = list(spec.grid)
        header = ["key", *names, "score", *(f"fold_{k}" for k in range(spec.folds)), "error"]
        write_records(args.csv, header, (
            [c.key, *(json.dumps(c.params[n]) for n in names), c.score, *c.fold_scores, c.error]
            for c in result.cells
        ))
    logger.info(f"Best parameters {result.best_params} with score {result.best_score:.6f}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from app.server import create_app

    app = create_app(load_model(args.model))
    uvicorn.run(app, host=args.host or settings.host, port=args.port or settings.port,
                log_level=settings.log_level.lower())
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cdebench", description="Conditional density estimation benchmarks")
    parser.add_argument("--log-level", default=None, help="Logging level (default from CDE_LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="Sample a dataset from a simulator")
    p.add_argument("--sim", required=True, metavar="NAME", help=f"one of: {', '.join(sorted(SIMULATORS))}")
    p.add_argument("--params-file", help="Simulator parameters (JSON file or inline JSON)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("fit", help="Fit an estimator and write a model file")
    p.add_argument("--estimator", required=True, metavar="NAME", help=f"one of: {', '.join(sorted([*ESTIMATORS, 'oracle']))}")
    p.add_argument("--data", help="Training CSV")
    p.add_argument("--config", help="Hyper-parameter overrides (JSON file or inline JSON)")
    p.add_argument("--model-out", required=True)
    p.add_argument("--seed", type=int, default=None, help="Overrides the config seed")
    p.add_argument("--train-fraction", type=float, default=1.0, help="Keep the first fraction of rows")
    p.add_argument("--n-targets", type=int, default=1)
    p.add_argument("--sim", help="Simulator wrapped by --estimator oracle")
    p.add_argument("--params-file", help="Simulator parameters for the oracle")
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("eval", help="Evaluate a model on a CSV or a simulator")
    p.add_argument("--model", required=True)
    p.add_argument("--data")
    p.add_argument("--sim")
    p.add_argument("--params-file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-holdout", type=int, default=1000)
    p.add_argument("--n-x-points", type=int, default=10)
    p.add_argument("--test-fraction", type=float, default=1.0, help="Evaluate on the last fraction of rows")
    p.add_argument("--n-targets", type=int, default=1)
    p.add_argument("--out", help="Metrics JSON (stdout when omitted)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("benchmark", help="Run a benchmark grid")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parallel", type=int, default=1, help="Worker processes (CDE_BENCH_THREADS overrides)")
    p.set_defaults(handler=cmd_benchmark)

    p = sub.add_parser("density", help="Export p(y|x) on a y-grid")
    p.add_argument("--model", required=True)
    p.add_argument("--x", nargs="+", required=True, help="Query values; comma-separate vector components")
    p.add_argument("--grid", required=True, help="lo:hi:n")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_density)

    p = sub.add_parser("cv", help="Grid search with k-fold cross-validation")
    p.add_argument("--estimator", required=True, metavar="NAME", help=f"one of: {', '.join(sorted(ESTIMATORS))}")
    p.add_argument("--data", required=True)
    p.add_argument("--grid", required=True, help="Parameter grid (JSON file or inline JSON)")
    p.add_argument("--config", help="Fixed hyper-parameters")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-targets", type=int, default=1)
    p.add_argument("--out", help="Result JSON (stdout when omitted)")
    p.add_argument("--csv", help="Optional CV table")
    p.set_defaults(handler=cmd_cv)

    p = sub.add_parser("serve", help="Serve a model over HTTP")
    p.add_argument("--model", required=True)
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(handler=cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except CdeError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
