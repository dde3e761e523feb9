"""Small input-validation helpers used across modules."""

from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def as_vector(x, size: int, name: str) -> np.ndarray:
    """Return ``x`` as a float64 vector of the given size."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (size,):
        raise InvalidInputError(f"{name} must have shape ({size},), got {v.shape}")
    return v


def as_matrix(x, shape: tuple, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.shape != shape:
        raise InvalidInputError(f"{name} must have shape {shape}, got {v.shape}")
    return v


def check_positive(value: float, name: str) -> float:
    if not value > 0:
        raise InvalidInputError(f"{name} must be > 0, got {value}")
    return float(value)


def check_nonnegative(value: float, name: str) -> float:
    if value < 0:
        raise InvalidInputError(f"{name} must be >= 0, got {value}")
    return float(value)


def check_odd(value: int, name: str) -> int:
    if value % 2 != 1:
        raise InvalidInputError(f"{name} must be odd, got {value}")
    return int(value)


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite values")
    return arr
