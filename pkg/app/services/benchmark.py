"""
Benchmark runner: every (simulator, estimator, sample size, seed) cell is an
independent task with its own hashed seed; cells run on a process pool and
are collected in key order.
"""

import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from app.core.config import settings
from app.core.errors import ConfigurationError
from app.models.schemas import BenchmarkConfig, EstimatorSpec, EvalProtocol, RunRecord, SimulatorSpec
from app.services.evaluation import evaluate_on_simulator
from app.services.registry import ESTIMATORS, build_estimator
from app.services.simulators import build_simulator
from app.utils.tabular import write_records

logger = logging.getLogger(__name__)

METRICS = ("hellinger", "avg_ll", "rmse_mean", "rmse_std")
GROUP_KEYS = ["simulator", "estimator", "n_samples", "eta_x", "eta_y"]
RECORD_COLUMNS = list(RunRecord.model_fields)
_NOISE_ESTIMATORS = ("mdn", "kmn")


def cell_seed(master_seed: int, *key) -> int:
    """Stable 64-bit seed from the master seed and a cell key."""
    text = "|".join(str(part) for part in (master_seed, *key))
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


def config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class BenchmarkCell:
    simulator: SimulatorSpec
    estimator: EstimatorSpec
    n_samples: int
    seed_index: int
    master_seed: int
    protocol: EvalProtocol
    eta: Optional[Tuple[float, float]] = None

    @property
    def key(self) -> tuple:
        eta = self.eta or (-1.0, -1.0)
        return (self.simulator.name, self.estimator.display_name, self.n_samples, self.seed_index, *eta)

    @property
    def seed(self) -> int:
        # noise levels share data and initialization within a seed index
        return cell_seed(
            self.master_seed, self.simulator.name, self.estimator.display_name, self.n_samples, self.seed_index
        )

    def estimator_overrides(self) -> dict:
        overrides = dict(self.estimator.config)
        fields = ESTIMATORS[self.estimator.name][1].model_fields
        if "seed" in fields and "seed" not in overrides:
            overrides["seed"] = self.seed % 2 ** 32
        if self.eta is not None:
            overrides["noise_std_x"], overrides["noise_std_y"] = self.eta
        return overrides


def run_cell(cell: BenchmarkCell) -> RunRecord:
    """Fit and evaluate one cell; failures are recorded, not raised."""
    seed = cell.seed
    record = RunRecord(
        simulator=cell.simulator.name,
        estimator=cell.estimator.display_name,
        n_samples=cell.n_samples,
        seed=cell.seed_index,
        cell_seed=seed,
        eta_x=cell.eta[0] if cell.eta else None,
        eta_y=cell.eta[1] if cell.eta else None,
        config_hash=config_hash({
            "simulator": cell.simulator.model_dump(mode="json"),
            "estimator": cell.estimator.model_dump(mode="json"),
            "overrides": cell.estimator_overrides(),
            "n_samples": cell.n_samples,
            "protocol": cell.protocol.model_dump(mode="json"),
        }),
    )
    start = time.perf_counter()
    try:
        sim = build_simulator(cell.simulator.name, cell.simulator.params, seed=cell.master_seed)
        train = sim.sample_joint(cell.n_samples, np.random.default_rng(seed))
        est = build_estimator(cell.estimator.name, cell.estimator_overrides()).fit(train)
        report = evaluate_on_simulator(est, sim, cell.protocol, seed=(seed + 1) % 2 ** 64)
        record.hellinger = report.hellinger_mean
        record.avg_ll = report.avg_log_likelihood
        record.rmse_mean = report.rmse_mean
        record.rmse_std = report.rmse_std
    except Exception as e:
        logger.exception(f"benchmark cell {cell.key} failed: {e}")
        record.error = f"{type(e).__name__}: {e}"
    record.wall_time = time.perf_counter() - start
    return record


class BenchmarkRunner:
    """Expands a BenchmarkConfig into cells and executes them."""

    def __init__(self, config: BenchmarkConfig):
        self.config = config
        for spec in config.estimators:
            if spec.name not in ESTIMATORS:
                raise ConfigurationError(
                    f"unknown estimator '{spec.name}'; valid names: {', '.join(sorted(ESTIMATORS))}"
                )
            if config.mode == "noise_sweep" and spec.name not in _NOISE_ESTIMATORS:
                raise ConfigurationError(f"noise sweep needs mdn or kmn estimators, got '{spec.name}'")
        for spec in config.simulators:
            build_simulator(spec.name, spec.params, seed=config.master_seed)

    def cells(self) -> List[BenchmarkCell]:
        cfg = self.config
        etas = [None]
        if cfg.mode == "noise_sweep":
            etas = [(ex, ey) for ex in cfg.noise_grid for ey in cfg.noise_grid]
        cells = [
            BenchmarkCell(sim, est, n, s, cfg.master_seed, cfg.protocol, eta)
            for sim in cfg.simulators
            for est in cfg.estimators
            for n in cfg.sample_sizes
            for s in range(cfg.n_seeds)
            for eta in etas
        ]
        keys = [c.key for c in cells]
        if len(set(keys)) != len(keys):
            raise ConfigurationError("benchmark cells are not unique; give repeated estimators distinct labels")
        return cells

    def run(self, parallel: int = 1) -> List[RunRecord]:
        cells = self.cells()
        workers = resolve_workers(parallel)
        logger.info(f"Running {len(cells)} benchmark cells on {workers} worker(s)")
        if workers == 1:
            records = [run_cell(c) for c in cells]
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                records = list(pool.map(run_cell, cells))
        by_key = {c.key: r for c, r in zip(cells, records)}
        return [by_key[k] for k in sorted(by_key)]


def resolve_workers(parallel: Optional[int]) -> int:
    """``CDE_BENCH_THREADS`` wins over the requested worker count."""
    workers = settings.bench_threads if settings.bench_threads is not None else parallel
    workers = workers or 1
    if workers < 1:
        raise ConfigurationError(f"worker count must be at least 1, got {workers}")
    return min(workers, os.cpu_count() or 1) if workers > 1 else 1


def records_frame(records: List[RunRecord]) -> pd.DataFrame:
    return pd.DataFrame([r.model_dump() for r in records], columns=RECORD_COLUMNS)


def _population_std(values: pd.Series) -> float:
    return values.std(ddof=0)


def aggregate_results(records: List[RunRecord]) -> pd.DataFrame:
    """
    Population mean and std of each metric per (simulator, estimator, n, eta)
    group. Failed cells count toward ``n_runs`` and ``n_failed`` only.
    """
    frame = records_frame(records)
    frame[list(METRICS)] = frame[list(METRICS)].astype(float)
    frame["failed"] = frame["error"].notna()
    named = {"n_runs": ("seed", "size"), "n_failed": ("failed", "sum")}
    for metric in METRICS:
        named[f"{metric}_mean"] = (metric, "mean")
        named[f"{metric}_std"] = (metric, _population_std)
    summary = frame.groupby(GROUP_KEYS, dropna=False, sort=True).agg(**named).reset_index()
    return summary.astype(object).where(summary.notna(), None)


def write_benchmark(records: List[RunRecord], out: Path) -> Tuple[Path, Path]:
    """Per-cell rows to ``out`` and group aggregates next to it."""
    out = Path(out)
    write_records(out, RECORD_COLUMNS, ([getattr(r, c) for c in RECORD_COLUMNS] for r in records))
    summary = aggregate_results(records)
    aggregate_path = out.with_name(f"{out.stem}_aggregate{out.suffix or '.csv'}")
    write_records(aggregate_path, list(summary.columns), summary.itertuples(index=False, name=None))
    return out, aggregate_path
