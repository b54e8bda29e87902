"""Synthetic datasets and per-node splits: IID, Dirichlet, label partition.

Poisoning replaces a shard's labels with a fixed-point-free permutation of
the label alphabet, which makes the shard's supervision actively misleading
while leaving its feature distribution untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tinynn import Dataset

SCHEMES = ("iid", "dirichlet", "label")


class BadParams(ValueError):
    pass


class TooFewClasses(ValueError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str
    n_nodes: int
    seed: int
    alpha: float = 0.5
    classes_per_node: int = 2

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise BadParams(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.n_nodes < 1:
            raise BadParams("n_nodes must be >= 1")
        if self.alpha <= 0:
            raise BadParams("alpha must be positive")
        if self.classes_per_node < 1:
            raise BadParams("classes_per_node must be >= 1")


def make_synthetic(n_classes: int, per_class: int, spread: float, seed: int) -> Dataset:
    """2-D Gaussian blobs, one per class, centers equally spaced on a circle
    of radius 3. Rows are grouped by class, exactly per_class each."""
    if n_classes < 2 or per_class < 1 or spread < 0:
        raise BadParams("need n_classes >= 2, per_class >= 1, spread >= 0")
    rng = np.random.default_rng(seed)
    feats, labels = [], []
    for c in range(n_classes):
        angle = 2.0 * math.pi * c / n_classes
        center = (3.0 * math.cos(angle), 3.0 * math.sin(angle))
        feats.append(rng.normal(loc=center, scale=spread, size=(per_class, 2)))
        labels.append(np.full(per_class, c))
    return Dataset(np.concatenate(feats), np.concatenate(labels), n_classes)


def _proportional_counts(share: np.ndarray, total: int) -> np.ndarray:
    """Largest-remainder rounding of share*total to integers summing to total."""
    raw = share * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short:
        order = np.lexsort((np.arange(len(share)), -(raw - counts)))
        counts[order[:short]] += 1
    return counts


def split(dataset: Dataset, spec: PartitionSpec) -> list[Dataset]:
    """Partition into one shard per node; shard union equals the input."""
    if len(dataset) == 0:
        raise BadParams("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    n = len(dataset)

    if spec.scheme == "iid":
        order = rng.permutation(n)
        base, extra = divmod(n, spec.n_nodes)
        shard_idx, start = [], 0
        for k in range(spec.n_nodes):
            size = base + (1 if k < extra else 0)
            shard_idx.append(order[start:start + size])
            start += size

    elif spec.scheme == "dirichlet":
        shard_idx = [[] for _ in range(spec.n_nodes)]
        for c in range(dataset.n_classes):
            members = np.flatnonzero(dataset.labels == c)
            if members.size == 0:
                continue
            members = rng.permutation(members)
            share = rng.dirichlet(np.full(spec.n_nodes, spec.alpha))
            counts = _proportional_counts(share, members.size)
            start = 0
            for k, cnt in enumerate(counts):
                shard_idx[k].extend(members[start:start + cnt])
                start += cnt
        shard_idx = [np.asarray(ix, dtype=int) for ix in shard_idx]
        _repair_empty(shard_idx)

    else:  # label partition
        groups = math.ceil(dataset.n_classes / spec.classes_per_node)
        if groups < spec.n_nodes:
            raise TooFewClasses(
                f"{dataset.n_classes} classes in groups of {spec.classes_per_node} "
                f"cannot cover {spec.n_nodes} nodes"
            )
        shard_idx = [[] for _ in range(spec.n_nodes)]
        for c in range(dataset.n_classes):
            node = (c // spec.classes_per_node) % spec.n_nodes
            shard_idx[node].extend(np.flatnonzero(dataset.labels == c))
        shard_idx = [np.asarray(ix, dtype=int) for ix in shard_idx]

    return [dataset.subset(ix) for ix in shard_idx]


def _repair_empty(shard_idx: list[np.ndarray]) -> None:
    """Move one example from the largest shard into each empty one, so every
    node can train."""
    for k, ix in enumerate(shard_idx):
        if ix.size:
            continue
        donor = max(range(len(shard_idx)), key=lambda j: shard_idx[j].size)
        shard_idx[k] = shard_idx[donor][-1:]
        shard_idx[donor] = shard_idx[donor][:-1]


def derangement(n: int, seed: int) -> np.ndarray:
    """Seeded fixed-point-free permutation of range(n) (Sattolo's algorithm,
    a single n-cycle)."""
    if n < 2:
        raise BadParams("derangement needs n >= 2")
    rng = np.random.default_rng(seed)
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i))  # j < i: never leaves a fixed point
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def poison(dataset: Dataset, seed: int) -> Dataset:
    """Label-flip poisoning: relabel every example through a seeded
    derangement of the label alphabet. Features are untouched."""
    if dataset.n_classes < 2:
        raise BadParams("poisoning needs >= 2 classes")
    perm = derangement(dataset.n_classes, seed)
    return Dataset(dataset.features, perm[dataset.labels], dataset.n_classes)
