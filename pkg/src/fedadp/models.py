"""Multinomial logistic regression and a small MLP over flat parameter vectors.

Parameters are stored layer by layer: each layer contributes its weight
matrix of shape (fan_in, fan_out) in row-major order, followed by its bias
of length fan_out. MLR is the single-layer case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import DimensionError

LOG_PROB_FLOOR = math.log(1e-12)


@dataclass(frozen=True)
class ModelSpec:
    kind: str  # "MLR" or "MLP"
    input_dim: int
    num_classes: int
    hidden_dims: tuple[int, ...] = ()

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if kind not in ("MLR", "MLP"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.input_dim < 1 or self.num_classes < 1:
            raise ValueError("input_dim and num_classes must be positive")
        if kind == "MLR" and self.hidden_dims:
            raise ValueError("MLR takes no hidden layers")
        if kind == "MLP" and not self.hidden_dims:
            raise ValueError("MLP needs at least one hidden layer")
        if any(h < 1 for h in self.hidden_dims):
            raise ValueError("hidden layer widths must be positive")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.num_classes]
        return list(zip(dims[:-1], dims[1:]))

    @property
    def num_params(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in self.layer_dims)


@dataclass
class Batch:
    features: np.ndarray
    labels: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.features.shape[0]} feature rows but {self.labels.shape[0]} labels"
            )
        if self.labels.shape[0] < 1:
            raise ValueError("a batch needs at least one sample")

    def __len__(self) -> int:
        return self.labels.shape[0]


def init_params(spec: ModelSpec, seed: int = 0) -> np.ndarray:
    if spec.kind == "MLR":
        return np.zeros(spec.num_params)
    rng = np.random.default_rng(seed)
    chunks = []
    for fan_in, fan_out in spec.layer_dims:
        bound = 1.0 / math.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_out))
    return np.concatenate(chunks)


def unpack(spec: ModelSpec, w: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into per-layer (weights, bias) views."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.shape[0] != spec.num_params:
        raise DimensionError(f"parameter vector has shape {w.shape}, model needs ({spec.num_params},)")
    layers = []
    offset = 0
    for fan_in, fan_out in spec.layer_dims:
        W = w[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        b = w[offset : offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    return layers


def _check_batch(spec: ModelSpec, batch: Batch) -> None:
    if batch.features.shape[1] != spec.input_dim:
        raise DimensionError(
            f"batch has {batch.features.shape[1]} features, model expects {spec.input_dim}"
        )
    if batch.labels.min() < 0 or batch.labels.max() >= spec.num_classes:
        raise ValueError(f"labels must lie in [0, {spec.num_classes})")


def _forward(spec, w, x):
    """Return logits and the list of layer inputs (activations) for backprop."""
    layers = unpack(spec, w)
    acts = [x]
    h = x
    for k, (W, b) in enumerate(layers):
        z = h @ W + b
        if k < len(layers) - 1:
            h = np.tanh(z)
            acts.append(h)
        else:
            h = z
    return h, acts, layers


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def predict_logits(spec: ModelSpec, w, features) -> np.ndarray:
    logits, _, _ = _forward(spec, w, np.atleast_2d(np.asarray(features, dtype=np.float64)))
    return logits


def loss(spec: ModelSpec, w, batch: Batch) -> float:
    """Mean cross-entropy of the true class, log-probabilities floored at ln(1e-12)."""
    _check_batch(spec, batch)
    logits, _, _ = _forward(spec, w, batch.features)
    logp = log_softmax(logits)[np.arange(len(batch)), batch.labels]
    return float(-np.mean(np.maximum(logp, LOG_PROB_FLOOR)))


def gradient(spec: ModelSpec, w, batch: Batch) -> np.ndarray:
    _check_batch(spec, batch)
    n = len(batch)
    logits, acts, layers = _forward(spec, w, batch.features)
    logp = log_softmax(logits)
    rows = np.arange(n)
    delta = np.exp(logp)
    delta[rows, batch.labels] -= 1.0
    # samples sitting on the log floor contribute a flat (zero) gradient
    delta[logp[rows, batch.labels] < LOG_PROB_FLOOR] = 0.0
    delta /= n

    grads = []
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads.append((acts[k].T @ delta, delta.sum(axis=0)))
        if k > 0:
            delta = (delta @ W.T) * (1.0 - acts[k] ** 2)
    out = []
    for gW, gb in reversed(grads):
        out.append(gW.ravel())
        out.append(gb)
    return np.concatenate(out)


def predict(spec: ModelSpec, w, features) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class
    return np.argmax(predict_logits(spec, w, features), axis=1)


def accuracy(spec: ModelSpec, w, batch: Batch) -> float:
    _check_batch(spec, batch)
    return float(np.mean(predict(spec, w, batch.features) == batch.labels))
