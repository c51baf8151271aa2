"""Ground-truth labels from bidirectional reprojection, and the quadruplet loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..imaging import check_homography, project
from ..matcher.model import MatchSet
from ..numerics import Tensor, ops

TH_POS = 3.0
TH_NEG = 6.0

POS, IGNORE, NEG = 1, 0, -1


@dataclass
class LabelSets:
    """Label grid over all (src, ref) keypoint pairs: 1 = Pos, -1 = Neg, 0 = Ignore."""

    grid: np.ndarray  # (N, M) int8
    th_pos: float = TH_POS
    th_neg: float = TH_NEG
    distance: np.ndarray | None = None  # (N, M) symmetric reprojection distance

    @property
    def pos(self) -> set[tuple[int, int]]:
        return set(zip(*map(np.ndarray.tolist, np.nonzero(self.grid == POS))))

    @property
    def neg(self) -> set[tuple[int, int]]:
        return set(zip(*map(np.ndarray.tolist, np.nonzero(self.grid == NEG))))

    @property
    def ignore(self) -> set[tuple[int, int]]:
        return set(zip(*map(np.ndarray.tolist, np.nonzero(self.grid == IGNORE))))

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.grid == POS))


def reprojection_distance(kpts_src: np.ndarray, kpts_ref: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``max(|H p_i - q_j|, |H^-1 q_j - p_i|)`` for every pair."""
    H = check_homography(H)
    p = np.asarray(kpts_src, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(kpts_ref, dtype=np.float64).reshape(-1, 2)
    fwd = project(H, p)
    bwd = project(np.linalg.inv(H), q)
    d_fwd = np.linalg.norm(fwd[:, None, :] - q[None, :, :], axis=-1)
    d_bwd = np.linalg.norm(p[:, None, :] - bwd[None, :, :], axis=-1)
    return np.maximum(d_fwd, d_bwd)


def labels_from_distance(d: np.ndarray, th_pos: float = TH_POS, th_neg: float = TH_NEG) -> LabelSets:
    """Threshold a distance grid; Pos additionally requires a mutual minimum (one-to-one).

    Close pairs that lose the mutual-minimum test fall into Ignore.
    """
    n, m = d.shape
    grid = np.zeros((n, m), dtype=np.int8)
    grid[d > th_neg] = NEG
    if n and m:
        row_best = np.argmin(d, axis=1)
        col_best = np.argmin(d, axis=0)
        rows = np.arange(n)
        mutual = col_best[row_best] == rows
        close = d[rows, row_best] < th_pos
        sel = mutual & close
        grid[rows[sel], row_best[sel]] = POS
    return LabelSets(grid, th_pos, th_neg, d)


def make_labels(kpts_src, kpts_ref, H, th_pos: float = TH_POS, th_neg: float = TH_NEG) -> LabelSets:
    return labels_from_distance(reprojection_distance(kpts_src, kpts_ref, H), th_pos, th_neg)


@dataclass
class LossBreakdown:
    total: Tensor
    l_pos: float
    l_neg: float
    l_fp: float
    l_fn: float
    n_pos: int
    n_neg: int
    n_fp: int
    n_fn: int

    @property
    def value(self) -> float:
        return self.total.item()

    def as_dict(self) -> dict:
        return {
            "total": self.value,
            "l_pos": self.l_pos,
            "l_neg": self.l_neg,
            "l_fp": self.l_fp,
            "l_fn": self.l_fn,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "n_fp": self.n_fp,
            "n_fn": self.n_fn,
        }


def _masked_mean_log(P: Tensor, mask: np.ndarray, positive: bool) -> tuple[Tensor | None, int]:
    count = int(mask.sum())
    if count == 0:
        return None, 0
    arg = P if positive else ops.affine(P, -1.0, 1.0)
    term = ops.sum(ops.mul(ops.log(arg, 1e-12), Tensor(mask.astype(P.dtype))))
    return ops.affine(term, -1.0 / count), count


def quadruplet_loss(P: Tensor, labels: LabelSets, predicted: MatchSet) -> LossBreakdown:
    """Positive + (negative + false-positive + false-negative) / 3, each a mean cross-entropy.

    False positives are predicted pairs labelled Neg or Ignore; false
    negatives are Pos pairs the prediction missed.  The prediction only
    selects entries, no gradient flows through the selection.  Empty sets
    contribute zero.
    """
    grid = labels.grid
    if grid.shape != P.shape:
        raise ValueError(f"label grid {grid.shape} does not match P {P.shape}")
    predicted_mask = np.zeros(grid.shape, dtype=bool)
    predicted_mask[predicted.src_idx, predicted.ref_idx] = True
    pos = grid == POS
    neg = grid == NEG
    fp = predicted_mask & ~pos
    fn = pos & ~predicted_mask

    l_pos, n_pos = _masked_mean_log(P, pos, True)
    l_neg, n_neg = _masked_mean_log(P, neg, False)
    l_fp, n_fp = _masked_mean_log(P, fp, False)
    l_fn, n_fn = _masked_mean_log(P, fn, True)

    third = [t for t in (l_neg, l_fp, l_fn) if t is not None]
    parts = []
    if l_pos is not None:
        parts.append(l_pos)
    if third:
        acc = third[0]
        for t in third[1:]:
            acc = ops.add(acc, t)
        parts.append(ops.affine(acc, 1.0 / 3.0))
    if not parts:
        total = Tensor(np.zeros((), dtype=P.dtype))
    else:
        total = parts[0] if len(parts) == 1 else ops.add(parts[0], parts[1])

    def val(t):
        return 0.0 if t is None else t.item()

    return LossBreakdown(total, val(l_pos), val(l_neg), val(l_fp), val(l_fn), n_pos, n_neg, n_fp, n_fn)
