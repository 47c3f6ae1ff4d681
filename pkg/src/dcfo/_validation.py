"""Input validation helpers shared across the package."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.utils import check_array


def as_points_matrix(X, *, copy: bool = True, name: str = "X") -> np.ndarray:
    """Coerce ``X`` to a finite 2-D float64 array.

    Accepts anything array-like (lists, DataFrames, ...). Raises ValueError on
    non-finite entries or wrong dimensionality.
    """
    try:
        arr = check_array(X, dtype=np.float64, ensure_2d=True, copy=copy)
    except ValueError as exc:
        raise ValueError(f"{name}: {exc}") from exc
    return arr


def as_point(x, dim: int, *, name: str = "x") -> np.ndarray:
    """Coerce ``x`` to a finite 1-D float64 vector of length ``dim``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.shape != (dim,):
        raise ValueError(f"{name} must have {dim} coordinates, got shape {np.shape(x)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_index(i, n: int, *, name: str = "index") -> int:
    """Validate an integer index into ``range(n)``."""
    if not isinstance(i, (int, np.integer)):
        raise TypeError(f"{name} must be an integer, got {type(i).__name__}")
    i = int(i)
    if not 0 <= i < n:
        raise ValueError(f"{name} {i} out of range for {n} points")
    return i


def check_k(k) -> int:
    if not isinstance(k, (int, np.integer)) or isinstance(k, bool):
        raise TypeError(f"k must be an integer, got {type(k).__name__}")
    k = int(k)
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    return k


def check_mask(mask, dim: int) -> Optional[np.ndarray]:
    """Validate an actionability mask: bool vector of length ``dim`` or None.

    True marks a coordinate the optimizer may move.
    """
    if mask is None:
        return None
    arr = np.asarray(mask)
    if arr.dtype != np.bool_:
        raise TypeError("actionable mask must be boolean")
    if arr.shape != (dim,):
        raise ValueError(f"actionable mask must have length {dim}, got shape {arr.shape}")
    return arr.copy()
