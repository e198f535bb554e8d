"""Input validation helpers shared by the estimators and the pipeline."""

from __future__ import annotations

import math
import numbers

import numpy as np

from .exceptions import InvalidArgumentError

VALID_GRANULARITIES = (2, 3, 4, 6, 8, 12)


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise InvalidArgumentError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise InvalidArgumentError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_nonnegative(value, name):
    value = float(value)
    if not value >= 0 or math.isnan(value):
        raise InvalidArgumentError(f"{name} must be >= 0, got {value}")
    return value


def check_positive(value, name, allow_inf=False):
    value = float(value)
    if math.isnan(value) or value <= 0 or (math.isinf(value) and not allow_inf):
        raise InvalidArgumentError(f"{name} must be > 0, got {value}")
    return value


def check_probability(value, name="p"):
    value = float(value)
    if not 0.0 <= value <= 1.0:
        raise InvalidArgumentError(f"{name} must lie in [0, 1], got {value}")
    return value


def check_granularity(granularity):
    if isinstance(granularity, bool) or granularity not in VALID_GRANULARITIES:
        raise InvalidArgumentError(
            f"time granularity must be one of {VALID_GRANULARITIES} hours, got {granularity!r}"
        )
    return int(granularity)


def check_unknown_rate(rate):
    rate = float(rate)
    if not 0.0 <= rate <= 1.0:
        raise InvalidArgumentError(f"unknown_rate must lie in [0, 1], got {rate}")
    return rate


def check_random_state(seed):
    """Turn ``None``, an int, a SeedSequence or a Generator into a Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def check_finite_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise InvalidArgumentError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if a.size == 0:
        raise InvalidArgumentError(f"{name} is empty")
    if not np.all(np.isfinite(a)):
        raise InvalidArgumentError(f"{name} contains non-finite entries")
    return a


def check_preference_matrix(X):
    """Coerce ``X`` into a :class:`~lppref.mf.PreferenceMatrix`.

    Accepts a PreferenceMatrix (returned unchanged) or a dense array-like where
    NaN marks an unobserved cell and every observed cell is 0 or 1.
    """
    from .mf import PreferenceMatrix

    if isinstance(X, PreferenceMatrix):
        return X
    return PreferenceMatrix.from_dense(X)
