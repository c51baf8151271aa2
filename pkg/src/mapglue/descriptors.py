"""Keypoint descriptor sampling and structural/semantic fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detector import FeatureMap
from .imaging import bilinear_sample
from .numerics import Tensor, ops


def sample_at_keypoints(fmap: FeatureMap, xy: np.ndarray) -> np.ndarray:
    """Bilinear lookup of ``fmap`` at pixel positions ``xy`` (N x 2), clamped to the cell grid."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    if len(xy) == 0:
        return np.zeros((0, fmap.channels), dtype=fmap.data.dtype)
    out = bilinear_sample(fmap.data, xy[:, 0] / fmap.stride, xy[:, 1] / fmap.stride, mode="clamp")
    return out.astype(fmap.data.dtype)


def init_linear(rng: np.random.Generator, n_out: int, n_in: int, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    bound = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-bound, bound, size=(n_out, n_in)).astype(dtype), np.zeros(n_out, dtype=dtype)


class FusionMLP:
    """Two-layer MLP over ``[d_str, d_sem]`` followed by row-wise L2 normalisation."""

    def __init__(self, c_str: int, c_sem: int, dim: int, rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        w1, b1 = init_linear(rng, dim, c_str + c_sem, dtype)
        w2, b2 = init_linear(rng, dim, dim, dtype)
        self.c_str, self.c_sem, self.dim = c_str, c_sem, dim
        self.params = {
            "fuse.w1": Tensor(w1, requires_grad=True, name="fuse.w1"),
            "fuse.b1": Tensor(b1, requires_grad=True, name="fuse.b1"),
            "fuse.w2": Tensor(w2, requires_grad=True, name="fuse.w2"),
            "fuse.b2": Tensor(b2, requires_grad=True, name="fuse.b2"),
        }

    def __call__(self, d_str: Tensor, d_sem: Tensor) -> Tensor:
        if d_str.shape[1] != self.c_str or d_sem.shape[1] != self.c_sem:
            raise ValueError(
                f"fusion expects {self.c_str}+{self.c_sem} input channels, got {d_str.shape[1]}+{d_sem.shape[1]}"
            )
        p = self.params
        h = ops.relu(ops.linear(ops.concat([d_str, d_sem]), p["fuse.w1"], p["fuse.b1"]))
        return ops.l2_normalize(ops.linear(h, p["fuse.w2"], p["fuse.b2"]))


@dataclass
class DescriptorBundle:
    positions: np.ndarray  # (N, 2)
    d_str: np.ndarray  # (N, C_str)
    d_sem: np.ndarray  # (N, C_sem), kept unfused for the inter-image graph
    d_sal: np.ndarray | None = None  # (N, D), filled in by the matcher

    def __len__(self) -> int:
        return len(self.positions)


def describe(xy: np.ndarray, structural: FeatureMap, semantic: FeatureMap) -> DescriptorBundle:
    return DescriptorBundle(np.asarray(xy, dtype=np.float64), sample_at_keypoints(structural, xy), sample_at_keypoints(semantic, xy))
