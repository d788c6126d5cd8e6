"""Input validation helpers shared across the package."""

import numpy as np


def check_2d(arr, name, shape=None, dtype=None):
    """Validate a 2-D array, optionally against an expected (H, W) shape."""
    arr = np.asarray(arr, dtype=dtype)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ValueError(f"{name} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


def check_same_shape(a, b, name_a="a", name_b="b"):
    if a.shape != b.shape:
        raise ValueError(
            f"shape mismatch: {name_a} is {a.shape}, {name_b} is {b.shape}"
        )


def check_binary(arr, name):
    arr = np.asarray(arr)
    if arr.dtype != bool and not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{name} must contain only 0/1 values")
    return arr.astype(bool)


def check_finite(arr, name):
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_odd_window(k, name, minimum=3):
    k = int(k)
    if k < minimum or k % 2 == 0:
        raise ValueError(f"{name} must be an odd integer >= {minimum}, got {k}")
    return k


def check_positive(x, name):
    if not np.isfinite(x) or x <= 0:
        raise ValueError(f"{name} must be positive and finite, got {x}")
    return x
