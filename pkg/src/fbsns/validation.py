"""Input validation shared by the estimator wrappers and the run configuration."""

from __future__ import annotations

import numbers

import numpy as np

from .fields import Grid

__all__ = [
    "check_positive",
    "check_nonnegative",
    "check_int",
    "check_choice",
    "check_field_array",
    "check_batch",
]


def check_positive(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive number, got {value!r}")
    return float(value)


def check_nonnegative(name: str, value) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real) or not np.isfinite(value) or value < 0:
        raise ValueError(f"{name} must be a nonnegative number, got {value!r}")
    return float(value)


def check_int(name: str, value, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_choice(name: str, value, choices) -> str:
    if value not in choices:
        raise ValueError(f"{name} must be one of {tuple(choices)}, got {value!r}")
    return value


def check_field_array(X, L: float = 2.0 * np.pi) -> tuple[np.ndarray, Grid]:
    """A single vector field ``(dim, n, ..., n)``; returns the float array and its grid."""
    X = np.asarray(X, dtype=float)
    if X.ndim < 2:
        raise ValueError(f"expected a vector field of shape (dim, n, ..., n), got {X.shape}")
    dim = X.shape[0]
    if X.ndim != dim + 1 or len(set(X.shape[1:])) != 1:
        raise ValueError(f"expected shape (dim,) + (n,) * dim, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("field contains non-finite values")
    return X, Grid(dim, X.shape[1], L)


def check_batch(X, L: float = 2.0 * np.pi) -> tuple[np.ndarray, Grid]:
    """A batch of vector fields ``(n_samples, dim, n, ..., n)``; a single field is promoted."""
    X = np.asarray(X, dtype=float)
    if not (X.ndim >= 3 and X.ndim == X.shape[1] + 2) and X.ndim >= 2 and X.ndim == X.shape[0] + 1:
        X = X[None]
    if X.ndim < 3:
        raise ValueError(f"expected fields of shape (n_samples, dim, n, ..., n), got {X.shape}")
    _, grid = check_field_array(X[0], L)
    return X, grid
