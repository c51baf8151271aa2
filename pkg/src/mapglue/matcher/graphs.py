"""Intra-image distance graphs and inter-image semantic graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

DEFAULT_EPS_MIN = 64.0


def epsilon_schedule(layer: int, n_layers: int, eps0: float, eps_min: float = DEFAULT_EPS_MIN) -> float:
    """Distance threshold of ``layer``: global for the first half, then halving down to ``eps_min``."""
    if not 0 <= layer < n_layers:
        raise ValueError(f"layer {layer} outside [0, {n_layers})")
    if layer < n_layers / 2:
        return float(eps0)
    return max(eps0 * 0.5 ** (layer - n_layers / 2), eps_min)


def max_pairwise_distance(xy: np.ndarray) -> float:
    if len(xy) < 2:
        return 0.0
    return float(pdist(np.asarray(xy, dtype=np.float64)).max())


@dataclass
class IntraGraph:
    layer: int
    epsilon: float
    mask: np.ndarray  # (N, N) bool, symmetric, diagonal set

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.mask[i])

    @property
    def edge_count(self) -> int:
        """Undirected edges, self-edges excluded."""
        n = len(self.mask)
        return int((self.mask.sum() - n) // 2)


def build_intra_graph(xy: np.ndarray, epsilon: float, layer: int = 0) -> IntraGraph:
    xy = np.asarray(xy, dtype=np.float64)
    if len(xy) == 0:
        raise ValueError("intra graph needs at least one keypoint")
    d = cdist(xy, xy)
    mask = d <= epsilon
    np.fill_diagonal(mask, True)
    return IntraGraph(layer, float(epsilon), mask)


def complete_intra_graph(n: int, layer: int = 0) -> IntraGraph:
    return IntraGraph(layer, math.inf, np.ones((n, n), dtype=bool))


@dataclass
class InterGraph:
    direction: str  # "src->ref" or "ref->src"
    mask: np.ndarray  # (N_self, N_other) bool; row i marks the other-image neighbours of node i

    def neighbors(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.mask[i])


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine; rows with zero norm score 0 against everything."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    an = np.divide(a, na[:, None], out=np.zeros_like(a), where=na[:, None] > 0)
    bn = np.divide(b, nb[:, None], out=np.zeros_like(b), where=nb[:, None] > 0)
    return an @ bn.T


def build_inter_graph(d_sem_self: np.ndarray, d_sem_other: np.ndarray, direction: str = "src->ref", keep: float = 0.5) -> InterGraph:
    """Link each node to the ``ceil(keep * M)`` most similar nodes of the other image.

    Ties in similarity go to the lower target index.
    """
    n, m = len(d_sem_self), len(d_sem_other)
    if n == 0 or m == 0:
        raise ValueError("inter graph needs keypoints in both images")
    k = math.ceil(keep * m)
    sim = cosine_similarity(d_sem_self, d_sem_other)
    # stable sort on -sim keeps lower indices first among equal similarities
    top = np.argsort(-sim, axis=1, kind="stable")[:, :k]
    mask = np.zeros((n, m), dtype=bool)
    np.put_along_axis(mask, top, True, axis=1)
    return InterGraph(direction, mask)


def complete_inter_graph(n: int, m: int, direction: str = "src->ref") -> InterGraph:
    return InterGraph(direction, np.ones((n, m), dtype=bool))
