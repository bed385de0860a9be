"""Dataset ingestion, standardization, splits and synthetic generators."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


class DataError(ValueError):
    pass


@dataclass
class Standardizer:
    """Per-column affine maps fitted on training rows only."""

    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float
    kept_columns: np.ndarray

    @classmethod
    def fit(cls, x, y) -> "Standardizer":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x_std = x.std(axis=0)
        kept = np.flatnonzero(x_std > 0)
        dropped = np.flatnonzero(x_std <= 0)
        if dropped.size:
            log.warning("dropping constant feature columns %s", dropped.tolist())
        y_std = float(y.std())
        if not y_std > 0:
            raise DataError("target column is constant")
        return cls(x.mean(axis=0)[kept], x_std[kept], float(y.mean()), y_std, kept)

    def transform_x(self, x):
        return (np.asarray(x, dtype=float)[:, self.kept_columns] - self.x_mean) / self.x_std

    def transform_y(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_std

    def inverse_y(self, y):
        return np.asarray(y, dtype=float) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "x_mean": self.x_mean.tolist(),
            "x_std": self.x_std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
            "kept_columns": self.kept_columns.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(
            np.asarray(d["x_mean"], dtype=float),
            np.asarray(d["x_std"], dtype=float),
            float(d["y_mean"]),
            float(d["y_std"]),
            np.asarray(d["kept_columns"], dtype=int),
        )


@dataclass
class Split:
    """Standardized train/test split plus the statistics used to build it."""

    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    stats: Standardizer


def read_table(path, delimiter: str | None = None, header: bool = False) -> np.ndarray:
    """Parse a comma- or whitespace-separated numeric table.

    Raises DataError naming the first offending row and column.
    """
    rows = []
    with open(path) as fh:
        lines = fh.read().splitlines()
    for lineno, line in enumerate(lines, start=1):
        if header and lineno == 1:
            continue
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        cells = line.split(delimiter) if delimiter else re.split(r"[,\s]+", line)
        row = []
        for col, cell in enumerate(cells, start=1):
            try:
                v = float(cell)
            except ValueError:
                raise DataError(f"non-numeric cell {cell!r} at row {lineno}, column {col}") from None
            if not np.isfinite(v):
                raise DataError(f"missing or non-finite value at row {lineno}, column {col}")
            row.append(v)
        if rows and len(row) != len(rows[0]):
            raise DataError(f"row {lineno} has {len(row)} columns, expected {len(rows[0])}")
        rows.append(row)
    if not rows:
        raise DataError(f"no data rows in {path}")
    table = np.asarray(rows, dtype=float)
    if table.shape[1] < 2:
        raise DataError("need at least one feature column and a target column")
    return table


def make_split(x, y, train_idx, test_idx) -> Split:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    stats = Standardizer.fit(x[train_idx], y[train_idx])
    return Split(
        stats.transform_x(x[train_idx]),
        stats.transform_y(y[train_idx]),
        stats.transform_x(x[test_idx]),
        stats.transform_y(y[test_idx]),
        stats,
    )


def random_split(n: int, train_fraction: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_train = int(round(train_fraction * n))
    if not 0 < n_train <= n:
        raise DataError("train split is empty")
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def ingest(path, train_fraction=0.9, rng=None, delimiter=None, header=False, train_idx=None) -> Split:
    """Read a table (last column = target) and standardize with train-split statistics."""
    table = read_table(path, delimiter, header)
    x, y = table[:, :-1], table[:, -1]
    if train_idx is None:
        train_idx, test_idx = random_split(len(table), train_fraction, rng or np.random.default_rng(0))
    else:
        train_idx = np.asarray(train_idx, dtype=int)
        test_idx = np.setdiff1d(np.arange(len(table)), train_idx)
    return make_split(x, y, train_idx, test_idx)


def toy_sine(n: int, rng: np.random.Generator, noise_std: float = 0.1, interval=(-4.0, 4.0)):
    """x ~ U(interval), y = sin(x) + N(0, noise_std^2)."""
    if n < 1:
        raise ValueError("n must be at least 1")
    x = rng.uniform(interval[0], interval[1], size=(n, 1))
    y = np.sin(x[:, 0]) + noise_std * rng.standard_normal(n)
    return x, y


def teacher_student(
    n: int,
    rng: np.random.Generator,
    input_dim: int = 2,
    active_units: int = 3,
    noise_std: float = 0.1,
    teacher_seed: int = 12345,
):
    """Regression data from a fixed relu teacher with `active_units` hidden units."""
    trng = np.random.default_rng(teacher_seed)
    W = trng.normal(size=(input_dim, active_units))
    W /= np.linalg.norm(W, axis=0, keepdims=True)
    b = trng.uniform(-0.5, 0.5, size=active_units)
    v = trng.choice([-1.0, 1.0], size=active_units) * trng.uniform(1.0, 2.0, size=active_units)
    x = rng.normal(size=(n, input_dim))
    f = np.maximum(x @ W + b, 0.0) @ v
    return x, f + noise_std * rng.standard_normal(n)
