"""Input validation helpers shared by the builders and estimators."""

from fractions import Fraction

import numpy as np


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


def check_half_integer(F, name="F"):
    """Return ``F`` as a float after checking that ``2F`` is a positive integer."""
    twice = Fraction(F).limit_denominator(1000) * 2
    if twice.denominator != 1 or twice <= 0 or abs(float(twice) - 2 * float(F)) > 1e-12:
        raise ValidationError(f"{name} must be a positive half-integer, got {F!r}")
    return float(twice) / 2


def check_nonnegative(value, name):
    value = float(value)
    if not np.isfinite(value) or value < 0:
        raise ValidationError(f"{name} must be finite and >= 0, got {value!r}")
    return value


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be finite and > 0, got {value!r}")
    return value


def check_square(matrix, name="matrix"):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValidationError(f"{name} must be a square 2D array, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise ValidationError(f"{name} contains non-finite entries")
    return matrix


def check_grid(grid, name="grid"):
    """Return a 1D float array that is strictly increasing."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValidationError(f"{name} must be a non-empty 1D array")
    if grid.size > 1 and np.any(np.diff(grid) <= 0):
        raise ValidationError(f"{name} must be strictly increasing")
    return grid
