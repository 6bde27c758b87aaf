"""Input validation helpers shared by the estimators and functional API."""

import numbers

import numpy as np


def check_frames(X, name="X", min_rows=1):
    """Return ``X`` as a finite 2-D float64 array with at least ``min_rows`` rows."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] < min_rows or X.shape[1] < 1:
        raise ValueError(f"{name} needs at least {min_rows} rows and 1 column, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def check_units(units, name="units", vocab=None):
    """Return a non-empty 1-D int64 array of non-negative unit ids."""
    arr = np.asarray(units)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if arr.dtype.kind not in "iu":
        if arr.dtype.kind == "f" and np.all(arr == np.round(arr)):
            arr = arr.astype(np.int64)
        else:
            raise ValueError(f"{name} must contain integers")
    arr = arr.astype(np.int64)
    if arr.min() < 0:
        raise ValueError(f"{name} must be non-negative")
    if vocab is not None and arr.max() >= vocab:
        raise ValueError(f"{name} contains id {arr.max()} >= vocabulary size {vocab}")
    return arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real, got {value!r}")
    if strict and value <= 0:
        raise ValueError(f"{name} must be > 0, got {value!r}")
    if not strict and value < 0:
        raise ValueError(f"{name} must be >= 0, got {value!r}")
    return float(value)


def check_random_state(seed):
    """Turn ``seed`` into a :class:`numpy.random.Generator`."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def derive_rng(seed, index):
    """Independent generator for item ``index`` of a stream seeded by ``seed``.

    The stream depends only on ``(seed, index)``, so items can be produced in
    any order or in parallel without changing their values.
    """
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
