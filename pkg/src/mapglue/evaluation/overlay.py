"""Side-by-side match visualisation coloured by ground-truth reprojection error."""

from __future__ import annotations

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw

from ..imaging import project

GREEN = (0, 255, 0)
RED = (255, 0, 0)


def _rgb8(image: np.ndarray) -> np.ndarray:
    img = np.round(np.clip(image, 0, 1) * 255).astype(np.uint8)
    return np.repeat(img[..., None], 3, axis=2) if img.ndim == 2 else img


def match_errors(pts_src, pts_ref, H_gt) -> np.ndarray:
    pts_src = np.asarray(pts_src, dtype=np.float64).reshape(-1, 2)
    pts_ref = np.asarray(pts_ref, dtype=np.float64).reshape(-1, 2)
    if len(pts_src) == 0:
        return np.zeros(0)
    return np.linalg.norm(project(H_gt, pts_src) - pts_ref, axis=1)


def render_overlay(img_src, img_ref, pts_src, pts_ref, H_gt, threshold: float = 5.0) -> np.ndarray:
    """uint8 RGB canvas: source left, reference right, one line per match.

    Green when ``|H_gt p - q| <= threshold``, red otherwise.
    """
    a, b = _rgb8(img_src), _rgb8(img_ref)
    h = max(a.shape[0], b.shape[0])
    canvas = np.zeros((h, a.shape[1] + b.shape[1], 3), dtype=np.uint8)
    canvas[: a.shape[0], : a.shape[1]] = a
    canvas[: b.shape[0], a.shape[1] :] = b
    im = PILImage.fromarray(canvas)
    draw = ImageDraw.Draw(im)
    errs = match_errors(pts_src, pts_ref, H_gt)
    off = a.shape[1]
    for (x0, y0), (x1, y1), e in zip(np.reshape(pts_src, (-1, 2)), np.reshape(pts_ref, (-1, 2)), errs):
        draw.line([(float(x0), float(y0)), (float(x1) + off, float(y1))], fill=GREEN if e <= threshold else RED, width=1)
    return np.asarray(im)


def save_overlay(canvas: np.ndarray, path) -> None:
    PILImage.fromarray(canvas).save(path, format="PNG")
