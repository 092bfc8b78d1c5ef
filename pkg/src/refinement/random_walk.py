"""
Gaussian pixel affinity within a disk and random-walk propagation of
class probabilities over it (scipy.sparse).
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse

logger = logging.getLogger(__name__)


@dataclass
class AffinityGraph:
    weights: sparse.csr_matrix  # [hw, hw], symmetric, unit diagonal
    degree: np.ndarray  # [hw]
    shape: tuple[int, int]
    sigma: float = 1.0


def disk_offsets(radius: int) -> list[tuple[int, int]]:
    """(dy, dx) with dy^2 + dx^2 <= radius^2, (0, 0) included."""
    return [
        (dy, dx)
        for dy in range(-radius, radius + 1)
        for dx in range(-radius, radius + 1)
        if dy * dy + dx * dx <= radius * radius
    ]


def build_affinity(features: np.ndarray, radius: int = 5, sigma: Optional[float] = None) -> AffinityGraph:
    """
    w_ij = exp(-||f_i - f_j||^2 / (2 sigma^2)) for pixels within `radius`.
    `features` is [F, h, w] (an RGB image works). sigma None uses the median
    feature distance over all within-radius pairs.
    """
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    if sigma is not None and sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 2:
        features = features[np.newaxis]
    _, h, w = features.shape
    index = np.arange(h * w).reshape(h, w)

    rows, cols, dist2 = [], [], []
    for dy, dx in disk_offsets(radius):
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        if y0 >= y1 or x0 >= x1:
            continue
        src = features[:, y0:y1, x0:x1]
        dst = features[:, y0 + dy:y1 + dy, x0 + dx:x1 + dx]
        rows.append(index[y0:y1, x0:x1].ravel())
        cols.append(index[y0 + dy:y1 + dy, x0 + dx:x1 + dx].ravel())
        dist2.append(((src - dst) ** 2).sum(axis=0).ravel())

    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    dist2 = np.concatenate(dist2)

    if sigma is None:
        off_diagonal = dist2[rows != cols]
        median = float(np.median(np.sqrt(off_diagonal))) if off_diagonal.size else 0.0
        sigma = median if median > 0 else 1.0
        logger.debug(f"Affinity sigma from median distance: {sigma:.4g}")

    weights = np.exp(-dist2 / (2.0 * sigma * sigma))
    matrix = sparse.csr_matrix((weights, (rows, cols)), shape=(h * w, h * w))
    degree = np.asarray(matrix.sum(axis=1)).ravel()
    return AffinityGraph(weights=matrix, degree=degree, shape=(h, w), sigma=sigma)


def transition_matrix(graph: AffinityGraph, beta: float = 8.0) -> sparse.csr_matrix:
    """D^-1 W^beta (elementwise power); all-zero rows become self-loops."""
    powered = graph.weights.power(beta).tocsr()
    row_sums = np.asarray(powered.sum(axis=1)).ravel()
    empty = row_sums <= 0
    if empty.any():
        logger.debug(f"{int(empty.sum())} isolated pixel(s) treated as self-loops")
        powered = powered + sparse.diags(empty.astype(np.float64))
        row_sums = np.where(empty, 1.0, row_sums)
    return (sparse.diags(1.0 / row_sums) @ powered).tocsr()


def random_walk(prior: np.ndarray, graph: AffinityGraph, beta: float = 8.0, t_iters: int = 256) -> np.ndarray:
    """
    Propagate [K, h, w] probabilities t_iters times along T = D^-1 W^beta,
    then renormalize every pixel to sum 1.
    """
    if beta < 1:
        raise ValueError(f"beta must be >= 1, got {beta}")
    if t_iters < 0:
        raise ValueError(f"t_iters must be >= 0, got {t_iters}")
    prior = np.asarray(prior, dtype=np.float64)
    k, h, w = prior.shape
    if (h, w) != graph.shape:
        raise ValueError(f"prior spatial size {(h, w)} does not match affinity graph {graph.shape}")
    if t_iters == 0:
        return prior.copy()

    T = transition_matrix(graph, beta)
    x = prior.reshape(k, h * w).T
    for _ in range(t_iters):
        x = T @ x

    total = x.sum(axis=1, keepdims=True)
    x = np.divide(x, total, out=np.zeros_like(x), where=total > 0)
    return x.T.reshape(k, h, w)
