"""Exact Euclidean k-NN geometry.

Everything here is brute force: embedding dimensions in practice (hundreds)
defeat tree indexes. Distances are computed by direct differences in float64
(not the ``|a|^2 + |b|^2 - 2ab`` expansion), so ``d(a, b) == d(b, a)``
bit-for-bit and self distances are exactly zero. Work is blocked over query
rows to bound memory; each output row depends only on its own query row.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .store import as_matrix

BLOCK_ROWS = 1024


def _check_dims(a, b):
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")


def squared_distances(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    _check_dims(a, b)
    return cdist(a, b, metric="sqeuclidean")


def distances(a, b) -> np.ndarray:
    return np.sqrt(squared_distances(a, b))


def _blocks(n):
    for start in range(0, n, BLOCK_ROWS):
        yield slice(start, min(start + BLOCK_ROWS, n))


@dataclass(frozen=True)
class NeighborhoodProfile:
    """k-th nearest-neighbour radius of every row of ``source``."""

    radii: np.ndarray
    k: int
    source: np.ndarray

    def __len__(self):
        return len(self.radii)


def _kth_smallest(dist, k):
    # k-th order statistic of each row; duplicates occupy distinct ranks
    return np.partition(dist, k - 1, axis=1)[:, k - 1]


def knn_radii(x, k) -> NeighborhoodProfile:
    """Distance from each row to its k-th nearest other row."""
    x = as_matrix(x)
    n = x.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k >= n:
        raise ValueError(f"k={k} needs at least {k + 1} points, got {n}")
    radii = np.empty(n)
    for rows in _blocks(n):
        d = np.sqrt(cdist(x[rows], x, metric="sqeuclidean"))
        # exclude self by index, not by value, so duplicates still count
        d[np.arange(d.shape[0]), np.arange(rows.start, rows.stop)] = np.inf
        radii[rows] = _kth_smallest(d, k)
    return NeighborhoodProfile(radii, int(k), x)


def cross_knn_radii(query, base, k) -> NeighborhoodProfile:
    """k-th smallest distance from each query row to the rows of ``base``."""
    query = as_matrix(query, "query")
    base = as_matrix(base, "base")
    _check_dims(query, base)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > base.shape[0]:
        raise ValueError(f"k={k} exceeds the {base.shape[0]} base points")
    radii = np.empty(query.shape[0])
    for rows in _blocks(query.shape[0]):
        d = np.sqrt(cdist(query[rows], base, metric="sqeuclidean"))
        radii[rows] = _kth_smallest(d, k)
    return NeighborhoodProfile(radii, int(k), query)


def containment_counts(centers, profile: NeighborhoodProfile, query) -> np.ndarray:
    """Number of closed balls ``B(center_i, radius_i)`` containing each query."""
    centers = as_matrix(centers, "centers")
    query = as_matrix(query, "query")
    _check_dims(centers, query)
    if len(profile.radii) != centers.shape[0]:
        raise ValueError(
            f"{len(profile.radii)} radii for {centers.shape[0]} centers")
    counts = np.empty(query.shape[0], dtype=np.int64)
    for rows in _blocks(query.shape[0]):
        d = np.sqrt(cdist(query[rows], centers, metric="sqeuclidean"))
        counts[rows] = np.count_nonzero(d <= profile.radii[None, :], axis=1)
    return counts


def min_distances(query, refs) -> np.ndarray:
    query = as_matrix(query, "query")
    refs = as_matrix(refs, "refs")
    _check_dims(query, refs)
    out = np.empty(query.shape[0])
    for rows in _blocks(query.shape[0]):
        out[rows] = np.sqrt(cdist(query[rows], refs, metric="sqeuclidean").min(axis=1))
    return out
