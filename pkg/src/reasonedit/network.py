"""Weighted embedding-similarity networks and Newman modularity scoring.

The adjacency normalizes pairwise Euclidean distances to [0, 1]:
A_uv = (d_max - d(u, v)) / (d_max - d_min) with a zero diagonal, which makes
the network invariant to global rescaling of the embedding space. Modularity
is invariant to uniform edge-weight scaling; both invariances are asserted
in the test suite on randomized instances.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ArgumentError, DegenerateNetworkError


@dataclass(frozen=True)
class SimilarityNetwork:
    node_ids: tuple
    adjacency: np.ndarray  # symmetric, [0, 1], zero diagonal, float64
    d_min: float
    d_max: float

    @property
    def size(self) -> int:
        return len(self.node_ids)


@dataclass(frozen=True)
class Partition:
    """Cluster labels per node, required to be contiguous 0..C-1."""

    labels: np.ndarray

    @classmethod
    def from_labels(cls, labels: Sequence[int]) -> "Partition":
        arr = np.asarray(labels, dtype=np.int64)
        if arr.ndim != 1 or arr.size == 0:
            raise ArgumentError("partition labels must be a nonempty 1-D sequence")
        present = np.unique(arr)
        expected = np.arange(present.size)
        if not np.array_equal(present, expected):
            raise ArgumentError("cluster ids must be contiguous starting at 0")
        return cls(labels=arr)

    @property
    def cluster_count(self) -> int:
        return int(self.labels.max()) + 1


def _as_matrix(vectors) -> np.ndarray:
    rows = []
    for v in vectors:
        row = np.asarray(getattr(v, "values", v), dtype=np.float64)
        if row.ndim != 1:
            raise ArgumentError("vectors must be one-dimensional")
        if rows and row.size != rows[0].size:
            raise ArgumentError("vectors must share a dimension")
        rows.append(row)
    if not rows:
        raise ArgumentError("need at least two vectors")
    return np.stack(rows)


def build_adjacency(vectors, node_ids: Sequence | None = None) -> SimilarityNetwork:
    """Build the normalized similarity network over a set of embeddings.

    Requires at least two vectors of equal dimension with finite entries.
    When every pairwise distance is equal the normalization is 0/0; all
    off-diagonal weights are then defined as 1 (no pair is distinguished).
    """
    matrix = _as_matrix(vectors)
    n = matrix.shape[0]
    if n < 2:
        raise ArgumentError("need at least two vectors")
    if not np.all(np.isfinite(matrix)):
        raise ArgumentError("vectors contain non-finite entries")
    lengths = {row.size for row in matrix}
    if len(lengths) != 1:
        raise ArgumentError("vectors must share a dimension")

    diff = matrix[:, None, :] - matrix[None, :, :]
    distances = np.sqrt(np.einsum("uvd,uvd->uv", diff, diff))
    off = ~np.eye(n, dtype=bool)
    d_min = float(distances[off].min())
    d_max = float(distances[off].max())
    if d_max == d_min:
        adjacency = np.ones((n, n), dtype=np.float64)
    else:
        adjacency = (d_max - distances) / (d_max - d_min)
    np.fill_diagonal(adjacency, 0.0)
    adjacency = np.clip(adjacency, 0.0, 1.0)
    # enforce exact symmetry against floating-point asymmetries
    adjacency = (adjacency + adjacency.T) / 2.0

    ids = tuple(node_ids) if node_ids is not None else tuple(range(n))
    if len(ids) != n:
        raise ArgumentError("node_ids length must match vector count")
    return SimilarityNetwork(node_ids=ids, adjacency=adjacency, d_min=d_min, d_max=d_max)


def modularity(net: SimilarityNetwork, partition: Partition) -> float:
    """Score a partition: fraction of edge weight within clusters minus the
    strength-preserving null-model expectation, summed over ordered node
    pairs (the zero diagonal contributes only null-model terms)."""
    adjacency = net.adjacency
    n = adjacency.shape[0]
    if partition.labels.size != n:
        raise ArgumentError("partition must label every node")
    strengths = adjacency.sum(axis=1)
    two_m = float(adjacency.sum())
    if two_m <= 0.0:
        raise DegenerateNetworkError("network has zero total edge weight")

    q = 0.0
    for cluster in range(partition.cluster_count):
        members = np.flatnonzero(partition.labels == cluster)
        internal = float(adjacency[np.ix_(members, members)].sum())
        strength = float(strengths[members].sum())
        q += internal / two_m - (strength / two_m) ** 2
    return q


def dump_network(net: SimilarityNetwork, partition: Partition | None, path: str | Path) -> None:
    """Debug dump: adjacency as a whitespace matrix plus one label row."""
    lines = [" ".join(f"{w:.6f}" for w in row) for row in net.adjacency]
    if partition is not None:
        lines.append("# labels " + " ".join(str(int(l)) for l in partition.labels))
    Path(path).write_text("\n".join(lines) + "\n", "utf-8")
