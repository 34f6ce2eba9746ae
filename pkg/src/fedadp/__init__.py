"""Federated learning simulator with FedAvg and FedAdp (angle-based adaptive) aggregation."""

from .aggregation import (
    AggregationWeights,
    chebyshev_audit,
    empirical_dissimilarity,
    fedadp_weights,
    fedavg_weights,
    gompertz_map,
    instantaneous_angle,
    update_smoothed_angle,
)
from .data import Dataset, NodePartition, NodeSpec, PartitionPlan, load_idx, partition
from .engine import FederatedEngine, RoundRecord, TrainConfig, run_experiment
from .models import Batch, ModelSpec

__version__ = "0.1.0"
