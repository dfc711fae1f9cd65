"""K-by-K grid quantization of entity locations.

Grid cell (i, j) is 1-based: row i spans y in [(i-1)*D/K, i*D/K) and column j
spans x in [(j-1)*D/K, j*D/K), with the last row/column closed so positions on
the far boundary still land in a cell. The flattened index of cell (i, j) is
(i-1)*K + j, in [1, K^2].
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

ROLE_ABS = "abs"
ROLE_GU = "gu"
ROLE_CGU = "cgu"


class OverlapError(ValueError):
    """Two entities share a grid cell where one-per-cell is required."""


class DegenerateFeatureError(ValueError):
    """Feature descriptor undefined (fewer than two ABSs)."""


class FeatureNiche(NamedTuple):
    mean_bin: int
    std_bin: int


class Pattern(NamedTuple):
    counts: np.ndarray           # (K, K) non-negative ints, row i / col j zero-based
    role: str

    @property
    def resolution(self) -> int:
        return self.counts.shape[0]


def cell_indices(positions, k, d):
    """Zero-based (row, col) arrays for positions inside [0, d]^2."""
    pos = np.atleast_2d(np.asarray(positions, dtype=float))
    cell = d / k
    col = np.clip(np.floor(pos[:, 0] / cell).astype(int), 0, k - 1)
    row = np.clip(np.floor(pos[:, 1] / cell).astype(int), 0, k - 1)
    return row, col


def quantize(positions, k, d, role=ROLE_GU) -> Pattern:
    """Count positions per grid cell."""
    counts = np.zeros((k, k), dtype=np.int64)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.size:
        row, col = cell_indices(positions, k, d)
        np.add.at(counts, (row, col), 1)
    return Pattern(counts, role)


def quantize_weighted(positions, weights, k, d, role=ROLE_CGU) -> Pattern:
    """Count positions per cell, each contributing its integer weight."""
    counts = np.zeros((k, k), dtype=np.int64)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    if positions.size:
        row, col = cell_indices(positions, k, d)
        np.add.at(counts, (row, col), np.asarray(weights, dtype=np.int64))
    return Pattern(counts, role)


def binary_mask(pattern) -> np.ndarray:
    """Element-wise positivity indicator of a pattern (or raw counts)."""
    counts = pattern.counts if isinstance(pattern, Pattern) else np.asarray(pattern)
    return (counts > 0).astype(np.int64)


def to_sequence(arg, k=None, d=None) -> np.ndarray:
    """Ascending flattened 1-based indices of occupied cells, one entity per cell.

    Accepts a Pattern, a raw counts array, or positions (requires k and d).
    """
    if isinstance(arg, Pattern):
        counts = arg.counts
    else:
        a = np.asarray(arg)
        if a.ndim == 2 and k is not None and a.shape[1] == 2 and a.shape != (k, k):
            counts = quantize(a, k, d, ROLE_ABS).counts
        else:
            counts = a
    if (counts > 1).any():
        raise OverlapError("pattern has a cell with more than one entity")
    row, col = np.nonzero(counts)
    kk = counts.shape[0]
    return np.sort(row * kk + col + 1)


def to_positions(seq, k, d) -> np.ndarray:
    """Cell-center coordinates of a flattened-index sequence. (N, 2) m."""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size != np.unique(seq).size:
        raise OverlapError("sequence contains duplicate cell indices")
    if seq.size and (seq.min() < 1 or seq.max() > k * k):
        raise ValueError("sequence index outside [1, K^2]")
    cell = d / k
    row = (seq - 1) // k
    col = (seq - 1) % k
    return np.column_stack([(col + 0.5) * cell, (row + 0.5) * cell])


def sequence_to_counts(seq, k) -> np.ndarray:
    counts = np.zeros((k, k), dtype=np.int64)
    seq = np.asarray(seq, dtype=np.int64)
    counts[(seq - 1) // k, (seq - 1) % k] = 1
    return counts


def pairwise_distance_stats(points) -> tuple[float, float]:
    """Mean and population std of all pairwise Euclidean distances."""
    pts = np.asarray(points, dtype=float)
    n = pts.shape[0]
    iu = np.triu_indices(n, k=1)
    dists = np.sqrt(((pts[iu[0]] - pts[iu[1]]) ** 2).sum(axis=1))
    return float(dists.mean()), float(dists.std())


def feature_of(seq, k, d, bin_width) -> FeatureNiche:
    """Niche of a sequence: binned (mean, std) of pairwise ABS distances."""
    seq = np.asarray(seq, dtype=np.int64)
    if seq.size < 2:
        raise DegenerateFeatureError("feature needs at least two ABSs")
    mu, sigma = pairwise_distance_stats(to_positions(seq, k, d))
    return FeatureNiche(int(mu // bin_width), int(sigma // bin_width))
