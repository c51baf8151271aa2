"""Corner reprojection error and threshold-normalised AUC."""

from __future__ import annotations

import math

import numpy as np

from ..imaging import image_corners, project

AUC_THRESHOLDS = (3, 5, 10)


def corner_error(H_gt: np.ndarray, H_pred: np.ndarray, width: int, height: int) -> float:
    """Mean distance between the four source corners mapped by ``H_gt`` and by ``H_pred``."""
    c = image_corners(width, height)
    d = np.linalg.norm(project(H_gt, c) - project(H_pred, c), axis=1)
    e = float(d.mean())
    return e if math.isfinite(e) else math.inf


def auc(errors, t: float) -> float:
    """``mean(max(0, 1 - e / t))``; infinite errors contribute zero."""
    if t <= 0:
        raise ValueError("threshold must be positive")
    e = np.asarray(errors, dtype=np.float64).reshape(-1)
    if e.size == 0:
        raise ValueError("auc of an empty error list")
    if np.any(np.isnan(e)) or np.any(e < 0):
        raise ValueError("errors must be non-negative")
    return float(np.mean(np.maximum(0.0, 1.0 - e / t)))
