"""Rotary relative position encoding over 2-d keypoint positions.

Rotation block ``k`` turns by ``theta_k = b_k . (p_j - p_i)`` where ``b_k``
points along x for even ``k`` and along y for odd ``k``; its magnitude is a
geometric ladder of angular frequencies whose wavelengths run from 8 px up
to twice the image diagonal.
"""

from __future__ import annotations

import math

import numpy as np

MIN_WAVELENGTH = 8.0


def basis_vectors(head_dim: int, diagonal: float) -> np.ndarray:
    """``(head_dim / 2, 2)`` array of the ``b_k`` vectors."""
    if head_dim % 2:
        raise ValueError(f"rotary encoding needs an even head dimension, got {head_dim}")
    n_blocks = head_dim // 2
    n_freq = math.ceil(n_blocks / 2)
    longest = max(2.0 * diagonal, MIN_WAVELENGTH)
    if n_freq == 1:
        wavelengths = np.array([MIN_WAVELENGTH])
    else:
        wavelengths = MIN_WAVELENGTH * (longest / MIN_WAVELENGTH) ** (np.arange(n_freq) / (n_freq - 1))
    omegas = 2.0 * math.pi / wavelengths
    b = np.zeros((n_blocks, 2))
    for k in range(n_blocks):
        b[k, k % 2] = omegas[k // 2]
    return b


def angles(xy: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Per-point angles ``b_k . p`` -> ``(N, head_dim / 2)``."""
    return np.asarray(xy, dtype=np.float64) @ basis.T


def rope(p_i: np.ndarray, p_j: np.ndarray, head_dim: int, diagonal: float) -> np.ndarray:
    """Dense block-diagonal rotation for the displacement ``p_j - p_i``."""
    basis = basis_vectors(head_dim, diagonal)
    theta = basis @ (np.asarray(p_j, dtype=np.float64) - np.asarray(p_i, dtype=np.float64))
    phi = np.zeros((head_dim, head_dim))
    for k, t in enumerate(theta):
        c, s = math.cos(t), math.sin(t)
        phi[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = [[c, -s], [s, c]]
    return phi


def rotation_tables(xy: np.ndarray, head_dim: int, diagonal: float) -> tuple[np.ndarray, np.ndarray]:
    """cos/sin tables for rotating queries and keys by their absolute angles.

    ``<R(a_i) q, R(a_j) k> = <q, R(a_j - a_i) k>``, so rotating each side by
    its own position reproduces the relative rotation without building
    per-pair matrices.
    """
    a = angles(xy, basis_vectors(head_dim, diagonal))
    return np.cos(a), np.sin(a)
