"""Input validation helpers shared by the functional API and the estimators."""
from __future__ import annotations

import numpy as np

from .exceptions import DimensionError, ZeroVector


def as_vector(x, length: int | None = None, name: str = "x") -> np.ndarray:
    """Return ``x`` as a finite 1-D float64 array, optionally of fixed length."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be 1-D, got shape {arr.shape}")
    if length is not None and arr.shape[0] != length:
        raise DimensionError(f"{name} must have length {length}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def as_matrix(a, name: str = "W") -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def require_nonzero(x: np.ndarray, name: str = "x") -> float:
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        raise ZeroVector(f"{name} must be nonzero")
    return norm


def frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr
