"""Aggregation weights for FedAvg and FedAdp.

FedAdp scores each node by the angle between its gradient and the global
gradient, averages that angle over the rounds the node has taken part in,
maps it through a decreasing Gompertz curve and normalizes with a softmax
(scaled by sample counts when those differ).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics
from .numerics import DegenerateGeometryError

FEDAVG = "FedAvg"
FEDADP = "FedAdp"
DEFAULT_ALPHA = 5.0


class SmoothedAngleStateError(ValueError):
    pass


@dataclass(frozen=True)
class AggregationWeights:
    weights: np.ndarray
    strategy: str

    def __len__(self) -> int:
        return self.weights.shape[0]


def _sizes(sizes: Sequence[int]) -> list[int]:
    sizes = [int(s) for s in sizes]
    if not sizes:
        raise ValueError("empty node set")
    if any(s <= 0 for s in sizes):
        raise ValueError(f"sample counts must be positive, got {sizes}")
    return sizes


def fedavg_weights(sizes: Sequence[int]) -> AggregationWeights:
    sizes = _sizes(sizes)
    total = sum(sizes)
    return AggregationWeights(np.array([s / total for s in sizes]), FEDAVG)


def instantaneous_angle(global_grad, node_grad) -> float:
    return numerics.angle_between(global_grad, node_grad)


def update_smoothed_angle(prev: float | None, theta: float, t: int) -> float:
    """Running mean of the angle over a node's first ``t`` participations."""
    if not 0.0 <= theta <= math.pi:
        raise ValueError(f"angle {theta} outside [0, pi]")
    if t < 1:
        raise ValueError("participation index starts at 1")
    if t == 1:
        return theta
    if prev is None:
        raise SmoothedAngleStateError(f"no previous smoothed angle at participation {t}")
    return (t - 1) / t * prev + theta / t


def gompertz_map(theta, alpha: float = DEFAULT_ALPHA):
    """alpha * (1 - exp(-exp(-alpha * (theta - 1)))), decreasing in theta."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return alpha * -np.expm1(-np.exp(-alpha * (np.asarray(theta, dtype=np.float64) - 1.0)))


def gompertz_deficit(theta, alpha: float = DEFAULT_ALPHA):
    """alpha - gompertz_map(theta), evaluated without cancellation.

    For small angles the map rounds to exactly alpha in float64; the deficit
    stays representable there and keeps the ordering visible.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    return alpha * np.exp(-np.exp(-alpha * (np.asarray(theta, dtype=np.float64) - 1.0)))


def fedadp_weights(
    smoothed_angles: Sequence[float], sizes: Sequence[int], alpha: float = DEFAULT_ALPHA
) -> AggregationWeights:
    sizes = _sizes(sizes)
    angles = np.asarray(smoothed_angles, dtype=np.float64)
    if angles.shape != (len(sizes),):
        raise ValueError(f"{angles.shape[0]} angles for {len(sizes)} nodes")
    if np.any(angles < 0.0) or np.any(angles > math.pi):
        raise ValueError("smoothed angles must lie in [0, pi]")
    scores = gompertz_map(angles, alpha)
    expf = np.exp(scores - scores.max())
    if all(s == sizes[0] for s in sizes):
        unnorm = expf
    else:
        unnorm = np.array(sizes, dtype=np.float64) * expf
    return AggregationWeights(unnorm / numerics.sequential_sum(unnorm), FEDADP)


def chebyshev_audit(
    smoothed_angles: Sequence[float], sizes: Sequence[int], alpha: float = DEFAULT_ALPHA
) -> tuple[float, float]:
    """Correlation-weighted sums under FedAdp and FedAvg weights, (adp, avg).

    With u = cos(smoothed angle), both u and the FedAdp per-sample weight
    decrease with the angle, so sum(u * adp) >= sum(u * avg).
    """
    u = np.cos(np.asarray(smoothed_angles, dtype=np.float64))
    adp = fedadp_weights(smoothed_angles, sizes, alpha).weights
    avg = fedavg_weights(sizes).weights
    return numerics.dot(u, adp), numerics.dot(u, avg)


def empirical_dissimilarity(grads: Sequence[np.ndarray], global_grad) -> tuple[float, float]:
    """Min and max of ||node grad|| / ||global grad||."""
    gnorm = numerics.norm(global_grad)
    if gnorm == 0.0:
        raise DegenerateGeometryError("global gradient is zero")
    ratios = [numerics.norm(g) / gnorm for g in grads]
    return min(ratios), max(ratios)
