"""Synchronous federated training rounds with a pluggable weighting strategy."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import aggregation, metrics, models, numerics
from .aggregation import FEDADP, FEDAVG, AggregationWeights
from .data import Dataset, NodePartition, PartitionPlan, batches, partition
from .models import ModelSpec

log = logging.getLogger(__name__)

WeightFn = Callable[[Sequence[float], Sequence[int], float], AggregationWeights]


def _fedavg(smoothed_angles, sizes, alpha):
    return aggregation.fedavg_weights(sizes)


STRATEGIES: dict[str, WeightFn] = {
    FEDAVG: _fedavg,
    FEDADP: aggregation.fedadp_weights,
}


@dataclass(frozen=True)
class TrainConfig:
    eta0: float = 0.01
    decay: float = 0.995
    local_epochs: int = 1
    batch_size: int = 50
    rounds: int = 300
    alpha: float = aggregation.DEFAULT_ALPHA
    strategy: str = FEDADP
    seed: int = 0
    # nodes sampled per round; None means every node takes part
    participation: int | None = None
    # every node draws the same shuffle per round instead of its own stream
    shared_shuffle: bool = False

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be > 0")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.local_epochs < 1 or self.batch_size < 1 or self.rounds < 1:
            raise ValueError("local_epochs, batch_size and rounds must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}, expected one of {sorted(STRATEGIES)}")
        if self.participation is not None and self.participation < 1:
            raise ValueError("participation must be >= 1")

    def eta(self, t: int) -> float:
        return self.eta0 * self.decay ** (t - 1)


@dataclass
class NodeRoundState:
    node_id: int
    smoothed_angle: float | None = None
    participation_count: int = 0
    last_delta: np.ndarray | None = field(default=None, repr=False)


@dataclass
class RoundRecord:
    round: int
    eta: float
    strategy: str
    participants: list[int]
    weights: np.ndarray  # one entry per node; 0 for nodes that sat the round out
    instantaneous_angles: np.ndarray
    smoothed_angles: np.ndarray
    global_grad_norm: float
    train_loss: float
    test_loss: float
    test_accuracy: float
    divergence: float
    chebyshev_lhs: float
    chebyshev_rhs: float
    empirical_A: float
    empirical_B: float


def stream_seed(*keys: int) -> int:
    """A 32-bit seed derived from a tuple of non-negative integers."""
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def local_sgd(
    spec: ModelSpec,
    w_global: np.ndarray,
    part: NodePartition,
    eta: float,
    epochs: int,
    batch_size: int,
    epoch_seeds: Sequence[int],
) -> tuple[np.ndarray, int]:
    """Plain mini-batch SGD from ``w_global``; returns final weights and step count."""
    w = np.array(w_global, dtype=np.float64)
    steps = 0
    for e in range(epochs):
        for batch in batches(part, batch_size, epoch_seeds[e]):
            w -= eta * models.gradient(spec, w, batch)
            steps += 1
    return w, steps


def local_update(
    spec: ModelSpec,
    w_global: np.ndarray,
    part: NodePartition,
    eta: float,
    epochs: int,
    batch_size: int,
    round_seed: int,
) -> np.ndarray:
    """Model delta after ``epochs`` local epochs at constant rate ``eta``."""
    if not eta > 0:
        raise ValueError("eta must be > 0")
    seeds = [stream_seed(round_seed, e) for e in range(epochs)]
    w, _ = local_sgd(spec, w_global, part, eta, epochs, batch_size, seeds)
    return w - w_global


def recover_gradients(deltas: Sequence[np.ndarray], eta: float) -> list[np.ndarray]:
    if not eta > 0:
        raise ValueError("eta must be > 0")
    return [-np.asarray(d, dtype=np.float64) / eta for d in deltas]


def weighted_sum(vectors: Sequence[np.ndarray], weights: Sequence[float]) -> np.ndarray:
    """sum_i weights[i] * vectors[i], accumulated in node order."""
    if len(vectors) == 0:
        raise ValueError("nonempty node set required")
    out = np.zeros_like(np.asarray(vectors[0], dtype=np.float64))
    for v, c in zip(vectors, weights):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != out.shape:
            raise numerics.DimensionError(f"length mismatch: {v.shape[0]} vs {out.shape[0]}")
        out += c * v
    return out


def global_gradient(grads: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    return weighted_sum(grads, aggregation.fedavg_weights(sizes).weights)


class FederatedEngine:
    """Holds the global model and per-node state of one experiment.

    Not safe to share across concurrent experiments; node-local training
    inside a round is fanned out over ``threads`` workers.
    """

    def __init__(
        self,
        spec: ModelSpec,
        parts: Sequence[NodePartition],
        config: TrainConfig,
        test_set: Dataset | None = None,
        threads: int = 1,
        weight_fn: WeightFn | None = None,
    ):
        self.spec = spec
        self.parts = list(parts)
        self.config = config
        self.threads = max(1, int(threads))
        self.weight_fn = weight_fn or STRATEGIES[config.strategy]
        self.w = models.init_params(spec, config.seed)
        self.states = [NodeRoundState(p.node_id) for p in self.parts]
        self._part_batches = [p.as_batch() for p in self.parts]
        self._test = (test_set or self.parts[0].dataset).as_batch()
        self._sizes = [p.size for p in self.parts]

    def participants(self, t: int) -> list[int]:
        k = self.config.participation
        n = len(self.parts)
        if k is None or k >= n:
            return list(range(n))
        rng = np.random.default_rng(stream_seed(self.config.seed, t, 0xC11E))
        return sorted(int(i) for i in rng.choice(n, size=k, replace=False))

    def _node_seed(self, node: int, t: int) -> int:
        if self.config.shared_shuffle:
            return stream_seed(self.config.seed, t)
        return stream_seed(self.config.seed, node, t)

    def _train_node(self, node: int, eta: float, t: int) -> np.ndarray:
        c = self.config
        return local_update(
            self.spec, self.w, self.parts[node], eta, c.local_epochs, c.batch_size,
            self._node_seed(self.parts[node].node_id, t),
        )

    def run_round(self, t: int) -> RoundRecord:
        c = self.config
        if not 1 <= t <= c.rounds:
            raise ValueError(f"round {t} outside [1, {c.rounds}]")
        eta = c.eta(t)
        active = self.participants(t)
        w_prev = self.w

        if self.threads > 1 and len(active) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                deltas = list(pool.map(lambda i: self._train_node(i, eta, t), active))
        else:
            deltas = [self._train_node(i, eta, t) for i in active]

        sizes = [self._sizes[i] for i in active]
        grads = recover_gradients(deltas, eta)
        g_global = global_gradient(grads, sizes)
        g_norm = numerics.norm(g_global)

        n = len(self.parts)
        inst = np.full(n, np.nan)
        for i, g in zip(active, grads):
            try:
                theta = aggregation.instantaneous_angle(g_global, g)
            except numerics.DegenerateGeometryError:
                theta = math.pi / 2
            state = self.states[i]
            state.participation_count += 1
            state.smoothed_angle = aggregation.update_smoothed_angle(
                state.smoothed_angle, theta, state.participation_count
            )
            state.last_delta = deltas[active.index(i)]
            inst[i] = theta
        smoothed = [self.states[i].smoothed_angle for i in active]

        agg = self.weight_fn(smoothed, sizes, c.alpha)
        self.w = w_prev + weighted_sum(deltas, agg.weights)

        weights = np.zeros(n)
        weights[active] = agg.weights
        lhs, rhs = aggregation.chebyshev_audit(smoothed, sizes, c.alpha)
        try:
            a_low, b_high = aggregation.empirical_dissimilarity(grads, g_global)
        except numerics.DegenerateGeometryError:
            a_low = b_high = math.nan

        losses = [models.loss(self.spec, self.w, b) for b in self._part_batches]
        train_loss = numerics.dot(aggregation.fedavg_weights(self._sizes).weights, losses)

        record = RoundRecord(
            round=t,
            eta=eta,
            strategy=c.strategy,
            participants=active,
            weights=weights,
            instantaneous_angles=inst,
            smoothed_angles=np.array(
                [np.nan if s.smoothed_angle is None else s.smoothed_angle for s in self.states]
            ),
            global_grad_norm=g_norm,
            train_loss=train_loss,
            test_loss=models.loss(self.spec, self.w, self._test),
            test_accuracy=models.accuracy(self.spec, self.w, self._test),
            divergence=metrics.divergence(grads, g_global),
            chebyshev_lhs=lhs,
            chebyshev_rhs=rhs,
            empirical_A=a_low,
            empirical_B=b_high,
        )
        log.debug("round %d acc=%.4f loss=%.4f", t, record.test_accuracy, record.train_loss)
        return record

    def run(self) -> list[RoundRecord]:
        return [self.run_round(t) for t in range(1, self.config.rounds + 1)]


def run_experiment(
    dataset: Dataset,
    plan: PartitionPlan,
    spec: ModelSpec,
    config: TrainConfig,
    test_set: Dataset | None = None,
    targets: Sequence[float] = (),
    threads: int = 1,
    weight_fn: WeightFn | None = None,
) -> metrics.ExperimentSummary:
    """Partition, train for ``config.rounds`` rounds, and summarize.

    Without a ``test_set`` accuracy is measured on ``dataset`` itself.
    """
    if dataset.input_dim != spec.input_dim:
        raise numerics.DimensionError(
            f"dataset has {dataset.input_dim} features, model expects {spec.input_dim}"
        )
    parts = partition(dataset, plan)
    engine = FederatedEngine(spec, parts, config, test_set, threads, weight_fn)
    return metrics.summarize(config.strategy, engine.run(), targets)
