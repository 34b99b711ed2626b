"""Input checks shared by the estimators and the command line."""

from __future__ import annotations

import numbers

import numpy as np

from .data import MortalitySurface
from .exceptions import DataError


def check_surface(X, ages=None, years=None, first_year=None, positive=False):
    """Coerce ``X`` to a :class:`MortalitySurface`.

    ``X`` may already be a surface, a pandas DataFrame indexed by age with
    calendar years as columns, or a 2-d array of shape (n_ages, n_years).
    For arrays, ``ages`` defaults to ``0..n_ages-1`` and ``years`` to
    ``first_year..`` (``first_year`` defaults to 0).
    """
    if isinstance(X, MortalitySurface):
        surface = X
    elif hasattr(X, "index") and hasattr(X, "columns"):
        surface = MortalitySurface(
            np.asarray(X.index, dtype=int), np.asarray(X.columns, dtype=int), X.to_numpy(dtype=float)
        )
    else:
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2:
            raise DataError(f"expected a 2-d (ages x years) array, got {arr.ndim}-d")
        if ages is None:
            ages = np.arange(arr.shape[0])
        if years is None:
            years = np.arange(arr.shape[1]) + (0 if first_year is None else int(first_year))
        surface = MortalitySurface(ages, years, arr)
    if positive and np.any(surface.rates <= 0):
        raise DataError("rates must be strictly positive")
    return surface


def check_positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise DataError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def parse_range(text, name="range"):
    """Parse ``"A-B"`` (inclusive) or a single integer into an int array."""
    text = str(text).strip()
    lo, sep, hi = text.partition("-")
    try:
        lo = int(lo)
        hi = int(hi) if sep else lo
    except ValueError:
        raise DataError(f"{name} must look like A-B, got {text!r}") from None
    if hi < lo:
        raise DataError(f"{name} {text!r} is empty")
    return np.arange(lo, hi + 1)


def check_is_fitted(estimator, attribute):
    from sklearn.exceptions import NotFittedError

    if not hasattr(estimator, attribute):
        raise NotFittedError(
            f"This {type(estimator).__name__} instance is not fitted yet; call 'fit' first."
        )
