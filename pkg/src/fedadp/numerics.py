"""Flat parameter-vector arithmetic and angle geometry.

All reductions accumulate left to right in float64 so that results are
bit-reproducible no matter how the caller schedules work.
"""

from __future__ import annotations

import math

import numpy as np


class DimensionError(ValueError):
    """Two vectors that must share a length do not."""


class DegenerateGeometryError(ArithmeticError):
    """An angle was requested against a zero-norm vector."""


# Number of times a cosine had to be clamped back into [-1, 1].
clamp_count = 0


def as_vector(values) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise DimensionError(f"expected a flat vector, got shape {vec.shape}")
    return vec


def _check_lengths(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")


def sequential_sum(values: np.ndarray) -> float:
    """Left-to-right float64 sum (``np.sum`` is pairwise, this is not)."""
    if values.size == 0:
        return 0.0
    return float(np.cumsum(values, dtype=np.float64)[-1])


def dot(a, b) -> float:
    a = as_vector(a)
    b = as_vector(b)
    _check_lengths(a, b)
    return sequential_sum(a * b)


def norm(a) -> float:
    a = as_vector(a)
    return math.sqrt(sequential_sum(a * a))


def angle_between(a, b) -> float:
    """Angle in radians, in [0, pi], between two nonzero vectors."""
    global clamp_count
    a = as_vector(a)
    b = as_vector(b)
    _check_lengths(a, b)
    sq_a = sequential_sum(a * a)
    sq_b = sequential_sum(b * b)
    if sq_a == 0.0 or sq_b == 0.0:
        raise DegenerateGeometryError("angle undefined for a zero-norm vector")
    # one sqrt of the product keeps angle(v, v) at exactly 0
    cos = dot(a, b) / math.sqrt(sq_a * sq_b)
    if cos > 1.0 or cos < -1.0:
        clamp_count += 1
        cos = min(1.0, max(-1.0, cos))
    return math.acos(cos)
