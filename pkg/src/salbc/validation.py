"""Input validation helpers shared by the estimators."""

import numbers

import numpy as np


def as_states(X, name="X", allow_empty=True):
    """Coerce scalar states to a flat float array.

    Accepts scalars, 1-D sequences and ``(n, 1)`` column arrays (the layout
    scikit-learn estimators receive).
    """
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 2:
        if arr.shape[1] != 1:
            raise ValueError(f"{name} must have a single feature column, got shape {arr.shape}")
        arr = arr[:, 0]
    elif arr.ndim > 2:
        raise ValueError(f"{name} must be at most 2-D, got shape {arr.shape}")
    arr = np.atleast_1d(arr)
    if not allow_empty and arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_targets(y, n, name="y"):
    arr = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
    if arr.shape[0] != n:
        raise ValueError(f"{name} has {arr.shape[0]} entries, expected {n}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite values")
    return arr


def check_scalar(value, name, *, low=None, high=None, include_low=True, include_high=True):
    """Validate a real scalar against an optional interval and return it as float."""
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value}")
    if low is not None:
        if (value < low) if include_low else (value <= low):
            op = ">=" if include_low else ">"
            raise ValueError(f"{name} must be {op} {low}, got {value}")
    if high is not None:
        if (value > high) if include_high else (value >= high):
            op = "<=" if include_high else "<"
            raise ValueError(f"{name} must be {op} {high}, got {value}")
    return value


def check_interval(bounds, name):
    lo, hi = (float(b) for b in bounds)
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
        raise ValueError(f"{name} must be a finite interval [lo, hi] with lo <= hi, got {bounds}")
    return lo, hi
