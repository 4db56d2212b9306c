"""Synthetic datasets, Dirichlet non-IID partitioning and dataset files.

File format (plain text, space separated)::

    n input_dim num_classes
    <label> <x_1> ... <x_d>        # one line per sample, floats as %.17g
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numeric import derive_stream


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    X: np.ndarray
    y: np.ndarray
    num_classes: int

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("X must be (n, d) with one label per row")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("label out of range for num_classes")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature values")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.size

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.X[idx], self.y[idx], self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    concentration: float
    min_per_client: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ValueError("need at least one client")
        if not self.concentration > 0:
            raise ValueError("Dirichlet concentration must be positive")
        if self.min_per_client < 0:
            raise ValueError("min_per_client must be non-negative")


Partition = dict[int, np.ndarray]


def synth_gaussian_mixture(
    num_classes: int,
    input_dim: int,
    n: int,
    spread: float,
    seed: int,
    radius: float = 1.0,
) -> LabeledDataset:
    """Isotropic Gaussian classes with means ``radius * e_c`` (simplex vertices).

    With more classes than dimensions the means are random unit directions
    instead.  Labels are balanced to within one and shuffled.
    """
    if num_classes < 2 or input_dim < 1 or n < num_classes:
        raise ValueError("need num_classes >= 2, input_dim >= 1 and n >= num_classes")
    if spread < 0:
        raise ValueError("spread must be non-negative")
    rng = derive_stream(seed, 0)
    if num_classes <= input_dim:
        means = np.eye(num_classes, input_dim)
    else:
        means = rng.normal(size=(num_classes, input_dim))
        means /= np.linalg.norm(means, axis=1, keepdims=True)
    y = rng.permutation(np.arange(n) % num_classes)
    X = radius * means[y] + spread * rng.normal(size=(n, input_dim))
    return LabeledDataset(X, y, num_classes)


def train_test_split(data: LabeledDataset, test_fraction: float, seed: int) -> tuple[LabeledDataset, LabeledDataset]:
    perm = derive_stream(seed, 1).permutation(len(data))
    n_test = int(round(test_fraction * len(data)))
    return data.subset(np.sort(perm[n_test:])), data.subset(np.sort(perm[:n_test]))


def _dirichlet(rng: np.random.Generator, concentration: float, m: int) -> np.ndarray:
    g = rng.gamma(concentration, size=m)
    total = g.sum()
    if total == 0.0:
        # every draw underflowed; the limit of tiny concentrations is a single client
        g = np.zeros(m)
        g[rng.integers(m)] = 1.0
        total = 1.0
    return g / total


def dirichlet_partition(data: LabeledDataset, spec: PartitionSpec) -> Partition:
    """Route each class's samples to clients by Dirichlet(concentration) proportions.

    A repair pass then moves samples from the largest client to any client
    below ``min_per_client``.  Deterministic for a given ``spec.seed``.
    """
    m = spec.num_clients
    n = len(data)
    if n < m * spec.min_per_client:
        raise ValueError(f"{n} samples cannot give {m} clients {spec.min_per_client} each")
    rng = derive_stream(spec.seed, 2)
    buckets: list[list[int]] = [[] for _ in range(m)]
    for c in range(data.num_classes):
        idx = np.flatnonzero(data.y == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        counts = rng.multinomial(idx.size, _dirichlet(rng, spec.concentration, m))
        for u, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            buckets[u].extend(chunk.tolist())
    for u in range(m):
        while len(buckets[u]) < spec.min_per_client:
            donor = max(range(m), key=lambda v: (len(buckets[v]), -v))
            buckets[u].append(buckets[donor].pop())
    return {u: np.sort(np.array(b, dtype=np.int64)) for u, b in enumerate(buckets)}


def label_entropy(data: LabeledDataset, indices) -> float:
    """Shannon entropy (nats) of the label histogram of ``indices``."""
    counts = np.bincount(data.y[np.asarray(indices, dtype=np.int64)], minlength=data.num_classes)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def save_dataset(data: LabeledDataset, path) -> None:
    lines = [f"{len(data)} {data.input_dim} {data.num_classes}"]
    for x, y in zip(data.X, data.y):
        lines.append(" ".join([str(int(y))] + ["%.17g" % v for v in x]))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path) -> LabeledDataset:
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines:
        raise DatasetFormatError(f"{path}: line 1: missing header")
    try:
        n, d, k = (int(v) for v in lines[0].split())
    except ValueError:
        raise DatasetFormatError(f"{path}: line 1: header must be 'n input_dim num_classes'") from None
    if n < 0 or d < 1 or k < 2:
        raise DatasetFormatError(f"{path}: line 1: invalid sizes {n} {d} {k}")
    if len(lines) - 1 < n:
        raise DatasetFormatError(f"{path}: line {len(lines) + 1}: truncated, expected {n} samples, found {len(lines) - 1}")
    X = np.empty((n, d))
    y = np.empty(n, dtype=np.int64)
    for i in range(n):
        lineno = i + 2
        fields = lines[i + 1].split()
        if len(fields) != d + 1:
            raise DatasetFormatError(f"{path}: line {lineno}: expected {d + 1} fields, found {len(fields)}")
        try:
            y[i] = int(fields[0])
            X[i] = [float(v) for v in fields[1:]]
        except ValueError as exc:
            raise DatasetFormatError(f"{path}: line {lineno}: {exc}") from None
        if not 0 <= y[i] < k:
            raise DatasetFormatError(f"{path}: line {lineno}: label {y[i]} outside [0, {k})")
        if not all(math.isfinite(v) for v in X[i]):
            raise DatasetFormatError(f"{path}: line {lineno}: non-finite feature")
    if any(line.strip() for line in lines[n + 1 :]):
        raise DatasetFormatError(f"{path}: line {n + 2}: unexpected data after {n} samples")
    return LabeledDataset(X, y, k)
