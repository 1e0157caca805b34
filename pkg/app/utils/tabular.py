"""
Dataset and record CSV files.

Reading goes through pandas; writing uses the csv module so every float is
emitted as its shortest round-trip ``repr``.
"""

import csv
import logging
import re
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np
import pandas as pd

from app.core.errors import ConfigurationError, CsvParseError
from app.services.estimator import Dataset

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

_LINE_PATTERN = re.compile(r"line (\d+)")


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_records(path: PathLike, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    """Write a header and rows as RFC-4180 CSV; returns the number of data rows."""
    count = 0
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
            count += 1
    return count


def dataset_header(x_dim: int, y_dim: int) -> List[str]:
    return [f"x_{i}" for i in range(x_dim)] + [f"y_{j}" for j in range(y_dim)]


def write_dataset(path: PathLike, data: Dataset) -> int:
    rows = np.hstack([data.X, data.Y])
    return write_records(path, dataset_header(data.x_dim, data.y_dim), rows.tolist())


def _column_roles(columns: List[str], n_targets: int):
    x_cols = [c for c in columns if c.startswith("x_")]
    y_cols = [c for c in columns if c.startswith("y_")]
    if x_cols and y_cols and len(x_cols) + len(y_cols) == len(columns):
        return x_cols, y_cols
    if not 1 <= n_targets < len(columns):
        raise ConfigurationError(
            f"cannot take {n_targets} target column(s) from a file with {len(columns)} column(s)"
        )
    return columns[:-n_targets], columns[-n_targets:]


def read_dataset(path: PathLike, n_targets: int = 1) -> Dataset:
    """
    Load a dataset CSV.

    Columns named ``x_*``/``y_*`` are used as features and targets when the
    header has them; otherwise the last ``n_targets`` columns are targets.

    Raises:
        CsvParseError: malformed rows or non-numeric cells, with the file line
    """
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError as e:
        raise ConfigurationError(f"data file not found: {path}") from e
    except pd.errors.EmptyDataError as e:
        raise CsvParseError("file is empty", 1) from e
    except pd.errors.ParserError as e:
        match = _LINE_PATTERN.search(str(e))
        raise CsvParseError(f"malformed row: {e}", int(match.group(1)) if match else None) from e

    if frame.empty:
        raise CsvParseError("no data rows", 2)
    numeric = frame.apply(pd.to_numeric, errors="coerce")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise CsvParseError(f"non-numeric value {frame.iat[row, col]!r} in column '{frame.columns[col]}'", int(row) + 2)

    x_cols, y_cols = _column_roles(list(frame.columns), n_targets)
    logger.debug(f"Read {len(frame)} rows from {path}: features {x_cols}, targets {y_cols}")
    return Dataset(numeric[x_cols].to_numpy(dtype=np.float64), numeric[y_cols].to_numpy(dtype=np.float64))
