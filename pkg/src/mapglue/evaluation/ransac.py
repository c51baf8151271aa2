"""Robust homography estimation: normalised 4-point DLT inside RANSAC."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

RANSAC_THRESHOLD = 1.5
RANSAC_ITERATIONS = 10_000
RANSAC_CONFIDENCE = 0.9999


class EstimationError(RuntimeError):
    """Too few matches or no model with at least four inliers."""


@dataclass
class RansacResult:
    H: np.ndarray
    inliers: np.ndarray  # bool mask over the input matches
    iterations: int

    @property
    def n_inliers(self) -> int:
        return int(self.inliers.sum())


def normalization_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity taking ``pts`` to zero mean and mean distance sqrt(2)."""
    c = pts.mean(axis=0)
    d = np.sqrt(((pts - c) ** 2).sum(axis=1)).mean()
    s = math.sqrt(2) / d if d > 1e-12 else 1.0
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def _apply(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ T[:2, :2].T + T[:2, 2]


def _dlt_rows(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Stacked DLT design matrices; ``src``/``dst`` are ``(..., K, 2)`` -> ``(..., 2K, 9)``."""
    x, y = src[..., 0], src[..., 1]
    u, v = dst[..., 0], dst[..., 1]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    r1 = np.stack([x, y, one, zero, zero, zero, -u * x, -u * y, -u], axis=-1)
    r2 = np.stack([zero, zero, zero, x, y, one, -v * x, -v * y, -v], axis=-1)
    rows = np.stack([r1, r2], axis=-2)  # (..., K, 2, 9)
    return rows.reshape(*rows.shape[:-3], -1, 9)


def normalized_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray | None:
    """Least-squares homography through >= 4 correspondences (Hartley normalisation)."""
    if len(src) < 4:
        return None
    Ts = normalization_transform(src)
    Td = normalization_transform(dst)
    A = _dlt_rows(_apply(Ts, src), _apply(Td, dst))
    _, _, vt = np.linalg.svd(A)
    Hn = vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if not np.all(np.isfinite(H)) or abs(H[2, 2]) < 1e-15:
        return None
    H = H / H[2, 2]
    if abs(np.linalg.det(H)) < 1e-12:
        return None
    return H


def _project_uv(H: np.ndarray, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``H`` is ``(B, 3, 3)``, ``pts`` ``(N, 2)`` -> two ``(B, N)`` coordinate arrays."""
    ph = np.empty((3, len(pts)))
    ph[:2] = pts.T
    ph[2] = 1.0
    q = (H.reshape(-1, 3) @ ph).reshape(len(H), 3, len(pts))
    w = q[:, 2]
    w[np.abs(w) < 1e-12] = 1e-12
    np.reciprocal(w, out=w)
    return q[:, 0] * w, q[:, 1] * w


def _project_batch(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return np.stack(_project_uv(H, pts), axis=-1)


def transfer_errors(H: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Symmetric transfer error: mean of the forward and backward reprojection distances."""
    single = H.ndim == 2
    Hb = H[None] if single else H
    fwd = np.linalg.norm(_project_batch(Hb, src) - dst, axis=-1)
    bwd = np.linalg.norm(_project_batch(np.linalg.inv(Hb), dst) - src, axis=-1)
    err = 0.5 * (fwd + bwd)
    return err[0] if single else err


def _inlier_counts(H: np.ndarray, src: np.ndarray, dst: np.ndarray, thr: float) -> np.ndarray:
    """Per-hypothesis count of symmetric transfer error < ``thr``.

    The forward distance alone bounds the mean from below, so the backward
    projection is only evaluated where ``fwd < 2 thr``.
    """
    u, v = _project_uv(H, src)
    u -= dst[:, 0]
    v -= dst[:, 1]
    u *= u
    v *= v
    u += v
    counts = np.zeros(len(H), dtype=np.int64)
    b_idx, n_idx = np.nonzero(u < 4 * thr * thr)
    if len(b_idx) == 0:
        return counts
    fwd = np.sqrt(u[b_idx, n_idx])
    Hinv = np.linalg.inv(H)[b_idx]
    q = dst[n_idx]
    w = Hinv[:, 2, 0] * q[:, 0] + Hinv[:, 2, 1] * q[:, 1] + Hinv[:, 2, 2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    bx = (Hinv[:, 0, 0] * q[:, 0] + Hinv[:, 0, 1] * q[:, 1] + Hinv[:, 0, 2]) / w
    by = (Hinv[:, 1, 0] * q[:, 0] + Hinv[:, 1, 1] * q[:, 1] + Hinv[:, 1, 2]) / w
    bwd = np.hypot(bx - src[n_idx, 0], by - src[n_idx, 1])
    good = 0.5 * (fwd + bwd) < thr
    np.add.at(counts, b_idx[good], 1)
    return counts


def _minimal_solve(A: np.ndarray) -> np.ndarray:
    """Null vectors of a batch of ``(8, 9)`` DLT systems as ``(B, 3, 3)``.

    Solves with ``h33 = 1`` (safe in normalised coordinates) and falls
    back to SVD when some system in the batch is singular.
    """
    try:
        h = np.linalg.solve(A[:, :, :8], -A[:, :, 8:])[..., 0]
        return np.concatenate([h, np.ones((len(A), 1))], axis=1).reshape(-1, 3, 3)
    except np.linalg.LinAlgError:
        _, _, vt = np.linalg.svd(A)
        return vt[:, -1].reshape(-1, 3, 3)


def _well_conditioned(H: np.ndarray) -> np.ndarray:
    """Finite, ``h33`` away from zero and far from singular (scale-free tests)."""
    finite = np.all(np.isfinite(H), axis=(1, 2))
    Hf = np.where(finite[:, None, None], H, 0.0)
    norm = np.sqrt((Hf**2).sum(axis=(1, 2)))
    norm[norm == 0] = 1.0
    Hn = Hf / norm[:, None, None]
    return finite & (np.abs(Hn[:, 2, 2]) > 1e-12) & (np.abs(np.linalg.det(Hn)) > 1e-12)


def _required_iterations(inlier_ratio: float, conf: float, max_iters: int) -> int:
    p_good = inlier_ratio**4
    if p_good <= 0:
        return max_iters
    if p_good >= 1:
        return 0
    return min(max_iters, int(math.ceil(math.log(1 - conf) / math.log(1 - p_good))))


def _draw_samples(rng: np.random.Generator, n: int, batch: int) -> np.ndarray:
    idx = rng.integers(0, n, size=(batch, 4))
    while True:
        s = np.sort(idx, axis=1)
        dup = np.any(s[:, 1:] == s[:, :-1], axis=1)
        if not dup.any():
            return idx
        idx[dup] = rng.integers(0, n, size=(int(dup.sum()), 4))


def ransac_homography(
    src,
    dst,
    thr: float = RANSAC_THRESHOLD,
    iters: int = RANSAC_ITERATIONS,
    conf: float = RANSAC_CONFIDENCE,
    seed=0,
    batch: int = 500,
) -> RansacResult:
    """Fit ``dst ~ H src`` robustly.

    Hypotheses come from random minimal samples solved by normalised DLT;
    a match is an inlier when its symmetric transfer error is below
    ``thr``.  Sampling stops once the standard confidence bound on having
    drawn an all-inlier sample exceeds ``conf`` (or after ``iters``).  The
    winning model is refit on all of its inliers.

    Hypotheses are scored in vectorised batches but accepted strictly in
    draw order, so the result equals a one-at-a-time loop.
    """
    src = np.asarray(src, dtype=np.float64).reshape(-1, 2)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 2)
    n = len(src)
    if n < 4 or len(dst) != n:
        raise EstimationError(f"need at least 4 matches, got {n}")
    rng = np.random.default_rng(seed)
    Ts, Td = normalization_transform(src), normalization_transform(dst)
    src_n, dst_n = _apply(Ts, src), _apply(Td, dst)
    Td_inv = np.linalg.inv(Td)

    best_count, best_H = 0, None
    needed = iters
    done = 0
    while done < min(needed, iters):
        b = min(batch, iters - done)
        samples = _draw_samples(rng, n, b)
        Hs = Td_inv @ _minimal_solve(_dlt_rows(src_n[samples], dst_n[samples])) @ Ts
        ok = _well_conditioned(Hs)
        counts = np.zeros(b, dtype=np.int64)
        if ok.any():
            Hok = Hs[ok] / Hs[ok][:, 2:3, 2:3]
            counts[ok] = _inlier_counts(Hok, src, dst, thr)
            Hs[ok] = Hok
        for i in range(b):
            done += 1
            if ok[i] and counts[i] > best_count:
                best_count, best_H = int(counts[i]), Hs[i]
                needed = _required_iterations(best_count / n, conf, iters)
            if done >= min(needed, iters):
                break
    if best_H is None or best_count < 4:
        raise EstimationError("no model with at least 4 inliers")
    inliers = transfer_errors(best_H, src, dst) < thr
    refit = normalized_dlt(src[inliers], dst[inliers])
    if refit is not None:
        refit_inliers = transfer_errors(refit, src, dst) < thr
        if refit_inliers.sum() >= inliers.sum():
            best_H, inliers = refit, refit_inliers
    if inliers.sum() < 4:
        raise EstimationError("no model with at least 4 inliers")
    return RansacResult(best_H / best_H[2, 2], inliers, done)
