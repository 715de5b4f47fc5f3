"""Synthetic multi-label clusters with overlapping label blocks."""

from __future__ import annotations

import numpy as np

from dsrh.dataset import MultiLabelDataset

BLOCK_WIDTH = 3


def label_blocks(clusters: int, label_count: int, width: int = BLOCK_WIDTH) -> np.ndarray:
    """(clusters, C) bool; cluster c owns labels c, c+1, ..., c+width-1 (mod C), 0-based."""
    width = min(width, label_count)
    blocks = np.zeros((clusters, label_count), dtype=bool)
    for c in range(clusters):
        blocks[c, [(c + j) % label_count for j in range(width)]] = True
    return blocks


def make_synthetic(
    n: int,
    label_count: int,
    dim: int,
    clusters: int,
    noise: float,
    seed: int,
) -> MultiLabelDataset:
    """Points around cluster centroids; a centroid is the sum of its labels' prototype vectors.

    Neighbouring clusters share labels, and therefore centroid components, so the
    similarity levels between clusters range from 0 up to the block width.
    """
    if min(n, label_count, dim, clusters) < 1:
        raise ValueError("n, labels, dim and clusters must all be positive")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    rng = np.random.default_rng(seed)
    blocks = label_blocks(clusters, label_count)
    prototypes = rng.standard_normal((label_count, dim))
    centroids = blocks.astype(np.float64) @ prototypes
    assign = rng.permutation(np.arange(n) % clusters)
    features = centroids[assign] + noise * rng.standard_normal((n, dim))
    return MultiLabelDataset(np.arange(n, dtype=np.uint64), features, blocks[assign])
