"""Small argument-checking helpers shared by the estimators and pipelines."""

import math
from numbers import Integral, Real

import numpy as np


class ConfigError(ValueError):
    """Raised when a configuration value is out of its admissible range."""


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, Integral):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_real(value, name, low=None, high=None, low_inclusive=True, high_inclusive=True):
    if isinstance(value, bool) or not isinstance(value, Real) or not math.isfinite(value):
        raise ConfigError(f"{name} must be a finite number, got {value!r}")
    value = float(value)
    if low is not None and (value < low or (value == low and not low_inclusive)):
        raise ConfigError(f"{name} must be {'>=' if low_inclusive else '>'} {low}, got {value}")
    if high is not None and (value > high or (value == high and not high_inclusive)):
        raise ConfigError(f"{name} must be {'<=' if high_inclusive else '<'} {high}, got {value}")
    return value


def check_probability(value, name):
    return check_real(value, name, 0.0, 1.0)


def check_distribution(weights, name, atol=1e-9):
    """Validate a probability vector and return it as a float array."""
    arr = np.asarray(weights, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise ConfigError(f"{name} must be a non-empty 1-d sequence")
    if np.any(~np.isfinite(arr)) or np.any(arr < 0):
        raise ConfigError(f"{name} must contain non-negative finite numbers")
    if abs(arr.sum() - 1.0) > atol:
        raise ConfigError(f"{name} must sum to 1, got {arr.sum():.6g}")
    return arr


def check_unit_rows(X, atol=1e-6):
    X = np.asarray(X)
    norms = np.linalg.norm(X, axis=1)
    if not np.allclose(norms, 1.0, atol=atol):
        raise ValueError("expected L2-normalized rows")
    return X
