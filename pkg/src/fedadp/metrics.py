"""Round diagnostics and rounds-to-target summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import numerics


def divergence(grads: Sequence[np.ndarray], global_grad) -> float:
    """Unweighted mean of ||global_grad - g_i|| over the participating nodes."""
    global_grad = numerics.as_vector(global_grad)
    if len(grads) == 0:
        raise ValueError("no node gradients")
    dists = []
    for g in grads:
        g = numerics.as_vector(g)
        if g.shape != global_grad.shape:
            raise numerics.DimensionError(f"length mismatch: {g.shape[0]} vs {global_grad.shape[0]}")
        dists.append(numerics.norm(global_grad - g))
    return numerics.sequential_sum(np.array(dists)) / len(dists)


def rounds_to_target(records, target: float) -> int | None:
    """First round whose test accuracy reaches ``target``; None if never."""
    if not 0.0 < target <= 1.0:
        raise ValueError(f"target accuracy {target} outside (0, 1]")
    for rec in records:
        if rec.test_accuracy >= target:
            return rec.round
    return None


def best_accuracy(records) -> float:
    return max((rec.test_accuracy for rec in records), default=0.0)


@dataclass
class ExperimentSummary:
    strategy: str
    rounds_to_target: dict[float, int | None]
    final_accuracy: float
    final_loss: float
    best_accuracy: float
    per_round: list = field(default_factory=list, repr=False)


def summarize(strategy: str, records, targets: Sequence[float]) -> ExperimentSummary:
    records = list(records)
    last = records[-1]
    return ExperimentSummary(
        strategy=strategy,
        rounds_to_target={float(t): rounds_to_target(records, t) for t in sorted(targets)},
        final_accuracy=last.test_accuracy,
        final_loss=last.train_loss,
        best_accuracy=best_accuracy(records),
        per_round=records,
    )
