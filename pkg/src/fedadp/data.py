"""Datasets: IDX (MNIST-style) files, seeded synthetic clusters, and node partitioning."""

from __future__ import annotations

import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import Batch

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
SYNTHETIC_SIGMA = 0.15


class IdxFormatError(ValueError):
    def __init__(self, path, field_name: str, offset: int, message: str):
        self.path = str(path)
        self.field = field_name
        self.offset = offset
        super().__init__(f"{self.path}: field '{field_name}' at byte offset {offset}: {message}")


class InfeasiblePartitionError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"features {self.features.shape} do not match {self.labels.shape[0]} labels"
            )
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels)


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

def _read_header(path, raw: bytes, magic: int, ndim: int) -> list[int]:
    need = 4 * (1 + ndim)
    if len(raw) < 4:
        raise IdxFormatError(path, "magic", 0, f"file is {len(raw)} bytes, too short for a header")
    found = struct.unpack_from(">I", raw, 0)[0]
    if found != magic:
        raise IdxFormatError(path, "magic", 0, f"expected 0x{magic:08x}, found 0x{found:08x}")
    if len(raw) < need:
        names = ["count", "rows", "cols"][:ndim]
        bad = names[(len(raw) - 4) // 4]
        raise IdxFormatError(path, bad, len(raw), "header truncated")
    return list(struct.unpack_from(f">{ndim}I", raw, 4))


def read_idx_images(path) -> np.ndarray:
    """Raw uint8 pixels, shape (count, rows * cols)."""
    raw = Path(path).read_bytes()
    count, rows, cols = _read_header(path, raw, IMAGES_MAGIC, 3)
    expected = count * rows * cols
    payload = len(raw) - 16
    if payload != expected:
        raise IdxFormatError(
            path, "pixels", 16, f"payload has {payload} bytes, header implies {expected}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)


def read_idx_labels(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    (count,) = _read_header(path, raw, LABELS_MAGIC, 1)
    payload = len(raw) - 8
    if payload != count:
        raise IdxFormatError(path, "labels", 8, f"payload has {payload} bytes, header implies {count}")
    return np.frombuffer(raw, dtype=np.uint8, offset=8).astype(np.int64)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    pixels = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if pixels.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            labels_path, "count", 4,
            f"{labels.shape[0]} labels but {pixels.shape[0]} images in {images_path}",
        )
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(pixels / 255.0, labels, num_classes)


def write_idx(ds: Dataset, images_path, labels_path, shape: tuple[int, int] | None = None) -> None:
    """Export a dataset as IDX; features are quantized to round(255 * x)."""
    n, d = ds.features.shape
    rows, cols = shape if shape is not None else (1, d)
    if rows * cols != d:
        raise ValueError(f"image shape {rows}x{cols} does not hold {d} features")
    pixels = np.rint(np.clip(ds.features, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">4I", IMAGES_MAGIC, n, rows, cols))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">2I", LABELS_MAGIC, n))
        fh.write(ds.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Synthetic clusters
# ---------------------------------------------------------------------------

def _draw_clusters(centers: np.ndarray, num_samples: int, rng: np.random.Generator) -> Dataset:
    num_classes, input_dim = centers.shape
    labels = rng.permutation(np.arange(num_samples) % num_classes)
    noise = rng.normal(0.0, SYNTHETIC_SIGMA, size=(num_samples, input_dim))
    features = np.clip(centers[labels] + noise, 0.0, 1.0)
    return Dataset(features, labels, num_classes)


def _corner_centers(num_classes: int, input_dim: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct random vertices of the unit cube, one per class."""
    if input_dim < 63 and 2**input_dim < num_classes:
        return rng.uniform(0.0, 1.0, size=(num_classes, input_dim))
    centers = rng.integers(0, 2, size=(num_classes, input_dim))
    while len(np.unique(centers, axis=0)) < num_classes:
        centers = rng.integers(0, 2, size=(num_classes, input_dim))
    return centers.astype(np.float64)


def generate_synthetic(num_samples: int, input_dim: int, num_classes: int, seed: int) -> Dataset:
    return generate_synthetic_split(num_samples, 0, input_dim, num_classes, seed)[0]


def generate_synthetic_split(
    train_samples: int, test_samples: int, input_dim: int, num_classes: int, seed: int
) -> tuple[Dataset, Dataset | None]:
    """Train and held-out sets drawn around the same class centers.

    Centers are distinct cube vertices (uniform in the cube when there are
    fewer vertices than classes); samples add N(0, 0.15^2) noise per
    coordinate and are clipped to [0, 1].
    """
    if train_samples < num_classes:
        raise ValueError("need at least one training sample per class")
    rng = np.random.default_rng(seed)
    centers = _corner_centers(num_classes, input_dim, rng)
    train = _draw_clusters(centers, train_samples, rng)
    test = _draw_clusters(centers, test_samples, rng) if test_samples > 0 else None
    return train, test


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeSpec:
    samples: int
    classes: int | None = None  # None means IID, otherwise x of x-class non-IID

    @property
    def iid(self) -> bool:
        return self.classes is None


@dataclass
class PartitionPlan:
    node_specs: list[NodeSpec]
    seed: int = 0

    def __post_init__(self):
        if not self.node_specs:
            raise ValueError("a partition plan needs at least one node")
        for i, spec in enumerate(self.node_specs):
            if spec.samples < 1:
                raise ValueError(f"node {i}: sample count must be positive")
            if spec.classes is not None and spec.classes < 1:
                raise ValueError(f"node {i}: non-IID class count must be >= 1")


_SHORTHAND_TERM = re.compile(r"^(\d+)\s*(IID|NonIID\((\d+)\))$", re.IGNORECASE)


def parse_shorthand(text: str, samples: int, seed: int = 0) -> PartitionPlan:
    """Build a plan from e.g. ``"5IID+5NonIID(1)"``; IID nodes come first."""
    specs: list[NodeSpec] = []
    for term in text.replace(" ", "").split("+"):
        m = _SHORTHAND_TERM.match(term)
        if m is None:
            raise ValueError(f"cannot parse partition term {term!r} in {text!r}")
        count = int(m.group(1))
        classes = None if m.group(3) is None else int(m.group(3))
        specs.extend(NodeSpec(samples, classes) for _ in range(count))
    return PartitionPlan(specs, seed)


@dataclass
class NodePartition:
    node_id: int
    dataset: Dataset = field(repr=False)
    indices: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.shape[0]

    def labels(self) -> np.ndarray:
        return self.dataset.labels[self.indices]

    def as_batch(self) -> Batch:
        return Batch(self.dataset.features[self.indices], self.dataset.labels[self.indices])


def partition(ds: Dataset, plan: PartitionPlan) -> list[NodePartition]:
    """Sample each node's indices independently; nodes may overlap."""
    rng = np.random.default_rng(plan.seed)
    all_idx = np.arange(len(ds))
    parts = []
    for node_id, spec in enumerate(plan.node_specs):
        if spec.iid:
            pool = all_idx
        else:
            if spec.classes > ds.num_classes:
                raise InfeasiblePartitionError(
                    f"node {node_id}: asks for {spec.classes} classes, dataset has {ds.num_classes}"
                )
            chosen = np.sort(rng.choice(ds.num_classes, size=spec.classes, replace=False))
            pool = all_idx[np.isin(ds.labels, chosen)]
            if pool.shape[0] < spec.samples:
                counts = {int(c): int(np.sum(ds.labels == c)) for c in chosen}
                raise InfeasiblePartitionError(
                    f"node {node_id}: classes {sorted(counts)} hold {pool.shape[0]} samples "
                    f"(per class {counts}), need {spec.samples}"
                )
        if pool.shape[0] < spec.samples:
            raise InfeasiblePartitionError(
                f"node {node_id}: dataset has {pool.shape[0]} samples, need {spec.samples}"
            )
        idx = np.sort(rng.choice(pool, size=spec.samples, replace=False))
        parts.append(NodePartition(node_id, ds, idx))
    return parts


def batch_indices(part: NodePartition, batch_size: int, epoch_seed: int) -> list[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    order = np.random.default_rng(epoch_seed).permutation(part.indices)
    return [order[k : k + batch_size] for k in range(0, order.shape[0], batch_size)]


def batches(part: NodePartition, batch_size: int, epoch_seed: int) -> list[Batch]:
    ds = part.dataset
    return [Batch(ds.features[ix], ds.labels[ix]) for ix in batch_indices(part, batch_size, epoch_seed)]
