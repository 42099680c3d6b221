"""Small argument-checking helpers shared across the package.

These raise ``ValueError`` with a message naming the offending argument, so
errors surface at construction time rather than deep inside a sweep.
"""

from __future__ import annotations

import numpy as np

MASS_TOL = 1e-12


def check_finite(values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{name} must be finite everywhere")
    return values


def check_nonnegative(values: np.ndarray, name: str) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if np.any(values < 0):
        raise ValueError(f"{name} must be nonnegative; min={values.min()!r}")
    return values


def check_mass(values: np.ndarray, name: str, tol: float = MASS_TOL) -> np.ndarray:
    values = check_nonnegative(values, name)
    total = float(values.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1 within {tol:g}; got {total!r}")
    return values


def check_positive_scalar(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number; got {value!r}")
    return value


def check_index(i: int, n: int, name: str) -> int:
    i = int(i)
    if not 0 <= i < n:
        raise ValueError(f"{name} must be in [0, {n}); got {i}")
    return i
