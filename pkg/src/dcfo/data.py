"""Dataset loading, scaling and synthesis helpers."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ._validation import as_points_matrix

logger = logging.getLogger(__name__)


class DataError(ValueError):
    """Raised when a data file cannot be parsed into a numeric matrix."""


@dataclass(frozen=True)
class ScalingParams:
    """Per-column affine scaling learned by :func:`standardize`.

    Constant columns are flagged and passed through unchanged (mean 0, scale 1
    stored for them, so apply/invert are the identity there).
    """

    mean: np.ndarray
    scale: np.ndarray
    constant_columns: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.mean) / self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) * self.scale + self.mean


@dataclass(frozen=True)
class Dataset:
    """An immutable point matrix with optional column names and scaling provenance."""

    points: np.ndarray
    column_names: Optional[Tuple[str, ...]] = None
    scaling: Optional[ScalingParams] = None

    def __post_init__(self):
        pts = as_points_matrix(self.points, name="points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.column_names is not None:
            names = tuple(str(c) for c in self.column_names)
            if len(names) != pts.shape[1]:
                raise DataError(
                    f"{len(names)} column names for {pts.shape[1]} columns"
                )
            object.__setattr__(self, "column_names", names)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def load_csv(path, has_header: bool = False) -> Dataset:
    """Read a numeric CSV into a :class:`Dataset`.

    ``has_header`` treats the first row as column names. Parse failures report
    the offending file line and column (both 1-based).
    """
    rows = []
    names = None
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            # skip blank lines (common trailing newline case)
            if not row or all(cell.strip() == "" for cell in row):
                continue
            if has_header and names is None:
                names = tuple(cell.strip() for cell in row)
                continue
            parsed = []
            for colno, cell in enumerate(row, start=1):
                try:
                    parsed.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}, column {colno}: "
                        f"could not parse {cell.strip()!r} as a number"
                    ) from None
            if rows and len(parsed) != len(rows[0][1]):
                raise DataError(
                    f"{path}: line {lineno}: expected {len(rows[0][1])} values, "
                    f"got {len(parsed)}"
                )
            rows.append((lineno, parsed))
    if not rows:
        raise DataError(f"{path}: no data rows")
    if names is not None and len(names) != len(rows[0][1]):
        raise DataError(
            f"{path}: header has {len(names)} names but rows have "
            f"{len(rows[0][1])} values"
        )
    points = np.array([vals for _, vals in rows], dtype=np.float64)
    if not np.all(np.isfinite(points)):
        bad = np.argwhere(~np.isfinite(points))[0]
        raise DataError(
            f"{path}: line {rows[bad[0]][0]}, column {bad[1] + 1}: non-finite value"
        )
    logger.debug("loaded %s: %d rows, %d columns", path, *points.shape)
    return Dataset(points, column_names=names)


def save_csv(dataset: Dataset, path) -> None:
    """Write a :class:`Dataset` to CSV; values round-trip through load_csv."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if dataset.column_names is not None:
            writer.writerow(dataset.column_names)
        for row in dataset.points:
            writer.writerow([format(v, ".17g") for v in row])


def standardize(dataset: Dataset) -> Tuple[Dataset, ScalingParams]:
    """Center and scale each column to unit sample standard deviation (ddof=1).

    Constant columns are left untouched and flagged in the returned params.
    Requires at least two rows.
    """
    pts = dataset.points
    if pts.shape[0] < 2:
        raise DataError("standardize requires at least 2 rows")
    mean = pts.mean(axis=0)
    scale = pts.std(axis=0, ddof=1)
    constant = scale == 0.0
    if constant.any():
        logger.info(
            "standardize: %d constant column(s) passed through unchanged",
            int(constant.sum()),
        )
    mean = np.where(constant, 0.0, mean)
    scale = np.where(constant, 1.0, scale)
    params = ScalingParams(mean=mean, scale=scale, constant_columns=constant)
    scaled = Dataset(
        params.apply(pts), column_names=dataset.column_names, scaling=params
    )
    return scaled, params


def destandardize(points: np.ndarray, params: ScalingParams) -> np.ndarray:
    """Map points from standardized space back to original units."""
    return params.invert(points)


def sample_gaussian(n: int, dim: int, seed: int) -> Dataset:
    """Draw ``n`` standard-normal points in ``dim`` dimensions, deterministically."""
    if n < 1 or dim < 1:
        raise ValueError("n and dim must be positive")
    rng = np.random.default_rng(seed)
    return Dataset(rng.standard_normal((n, dim)))
