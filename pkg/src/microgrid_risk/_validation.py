import math

import numpy as np

from .exceptions import InvalidArgumentError


def check_positive(name, value):
    value = float(value)
    if not math.isfinite(value) or value <= 0.0:
        raise InvalidArgumentError(f"{name} must be finite and > 0, got {value!r}")
    return value


def check_nonnegative(name, value):
    value = float(value)
    if not math.isfinite(value) or value < 0.0:
        raise InvalidArgumentError(f"{name} must be finite and >= 0, got {value!r}")
    return value


def check_finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise InvalidArgumentError(f"{name} must be finite, got {value!r}")
    return value


def check_vector(name, values, *, positive=False):
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidArgumentError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} must contain only finite values")
    if positive and np.any(arr <= 0.0):
        raise InvalidArgumentError(f"{name} must be strictly positive")
    return arr


def check_positive_array(name, values):
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise InvalidArgumentError(f"{name} must be finite and > 0")
    return arr
