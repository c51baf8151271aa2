"""Images, gradients, homographies and the warp samplers.

Images are numpy arrays, ``(H, W)`` or ``(H, W, 3)``, float in [0, 1].
Pixel centres sit on integer coordinates, origin top-left, x to the right,
y downward.  Homographies are 3x3 arrays mapping source ``(x, y, 1)`` to
reference coordinates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np
from PIL import Image as PILImage
from scipy import ndimage


class ImageFormatError(ValueError):
    pass


class SingularHomographyError(ValueError):
    pass


DET_EPS = 1e-12


# ---------------------------------------------------------------------------
# I/O


def load_png(path) -> np.ndarray:
    """Read an 8-bit grayscale or RGB PNG into a float image in [0, 1]."""
    path = Path(path)
    try:
        with PILImage.open(path) as im:
            if im.format != "PNG":
                raise ImageFormatError(f"{path}: not a PNG ({im.format})")
            mode = im.mode
            if mode in ("I", "I;16", "I;16B", "I;16L", "F") or mode.startswith("I;16"):
                raise ImageFormatError(f"{path}: unsupported bit depth (mode {mode}); only 8-bit PNG is supported")
            if mode in ("P", "RGBA"):
                im = im.convert("RGB")
            elif mode in ("LA", "1"):
                im = im.convert("L")
            elif mode not in ("L", "RGB"):
                raise ImageFormatError(f"{path}: unsupported PNG mode {mode}")
            arr = np.asarray(im, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: unreadable image ({exc})") from exc
    return arr.astype(np.float64) / 255.0


def save_png(image: np.ndarray, path) -> None:
    check_image(image)
    q = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    PILImage.fromarray(q, mode="L" if q.ndim == 2 else "RGB").save(Path(path), format="PNG")


def check_image(image: np.ndarray) -> None:
    if image.ndim not in (2, 3) or (image.ndim == 3 and image.shape[2] != 3):
        raise ImageFormatError(f"image must be HxW or HxWx3, got {image.shape}")
    if image.size == 0:
        raise ImageFormatError("empty image")
    if not np.all(np.isfinite(image)) or image.min() < 0.0 or image.max() > 1.0:
        raise ImageFormatError("pixel values must lie in [0, 1]")


def to_grayscale(image: np.ndarray) -> np.ndarray:
    if image.ndim == 2:
        return image
    return image[..., 0] * 0.299 + image[..., 1] * 0.587 + image[..., 2] * 0.114


# ---------------------------------------------------------------------------
# gradients

_SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def sobel_gradients(gray: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Horizontal/vertical Sobel responses and their magnitude (edge-replicated borders)."""
    if gray.ndim != 2:
        raise ValueError(f"sobel_gradients expects a single-channel image, got {gray.shape}")
    if gray.shape[0] < 3 or gray.shape[1] < 3:
        raise ValueError(f"image {gray.shape} is smaller than the 3x3 Sobel kernel")
    p = np.pad(gray, 1, mode="edge")
    h, w = gray.shape

    def win(dy, dx):
        return p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]

    gx = (win(-1, 1) + 2 * win(0, 1) + win(1, 1)) - (win(-1, -1) + 2 * win(0, -1) + win(1, -1))
    gy = (win(1, -1) + 2 * win(1, 0) + win(1, 1)) - (win(-1, -1) + 2 * win(-1, 0) + win(-1, 1))
    return gx, gy, np.sqrt(gx * gx + gy * gy)


# ---------------------------------------------------------------------------
# homographies


def normalize_homography(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64).reshape(3, 3)
    if abs(H[2, 2]) > 0:
        H = H / H[2, 2]
    return H


def check_homography(H: np.ndarray) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64).reshape(3, 3)
    if not np.all(np.isfinite(H)) or abs(np.linalg.det(H)) <= DET_EPS:
        raise SingularHomographyError(f"homography is singular or non-finite:\n{H}")
    return H


def project(H: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Apply ``H`` to ``(N, 2)`` points."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    q = pts @ H[:, :2].T + H[:, 2]
    w = q[:, 2:3]
    w = np.where(np.abs(w) < 1e-15, 1e-15, w)
    return q[:, :2] / w


def bilinear_sample(image: np.ndarray, x: np.ndarray, y: np.ndarray, mode: str = "zero") -> np.ndarray:
    """Sample ``image`` at float coordinates.

    ``mode="zero"`` fills samples outside ``[0, W-1] x [0, H-1]`` with 0,
    ``mode="clamp"`` clamps the coordinates into that range first.
    Works for ``(H, W)`` and ``(H, W, C)`` arrays.
    """
    h, w = image.shape[:2]
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if mode == "clamp":
        x = np.clip(x, 0, w - 1)
        y = np.clip(y, 0, h - 1)
    elif mode != "zero":
        raise ValueError(f"unknown sampling mode {mode!r}")
    # scipy's "constant" mode returns cval outside [0, n-1] and interpolates only inside
    coords = np.stack([y.ravel(), x.ravel()])
    planes = [image] if image.ndim == 2 else [image[..., c] for c in range(image.shape[2])]
    out = [ndimage.map_coordinates(np.asarray(p, dtype=np.float64), coords, order=1, mode="constant", cval=0.0) for p in planes]
    if image.ndim == 2:
        return out[0].reshape(x.shape)
    return np.stack(out, axis=-1).reshape(x.shape + (image.shape[2],))


def warp(image: np.ndarray, H: np.ndarray, out_size: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Warp ``image`` by ``H`` (source -> output) onto an ``(width, height)`` canvas.

    Inverse mapping with bilinear interpolation; returns ``(warped, valid)``
    where ``valid`` marks output pixels whose pre-image lies inside the source.
    """
    H = check_homography(H)
    Hinv = np.linalg.inv(H)
    width, height = out_size
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    src = project(Hinv, np.stack([xs.ravel(), ys.ravel()], axis=1))
    sx = src[:, 0].reshape(height, width)
    sy = src[:, 1].reshape(height, width)
    h, w = image.shape[:2]
    valid = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    out = bilinear_sample(image, sx, sy, mode="zero")
    return np.clip(out, 0.0, 1.0), valid


def resize_longside(image: np.ndarray, limit: int = 640) -> tuple[np.ndarray, float]:
    """Bilinearly shrink so the longer side equals ``limit``; no-op when already small enough.

    Returns the image and the scale ``s``; map resized points back with
    :func:`unscale_points`.
    """
    if limit <= 0:
        raise ValueError("limit must be positive")
    h, w = image.shape[:2]
    if max(h, w) <= limit:
        return image, 1.0
    s = limit / max(h, w)
    nw, nh = max(1, round(w * s)), max(1, round(h * s))
    ys, xs = np.mgrid[0:nh, 0:nw].astype(np.float64)
    # pixel-centre alignment: output centre x maps to (x + 0.5) / s - 0.5
    out = bilinear_sample(image, (xs + 0.5) / s - 0.5, (ys + 0.5) / s - 0.5, mode="clamp")
    return np.clip(out, 0.0, 1.0), s


def unscale_points(pts: np.ndarray, scale: float) -> np.ndarray:
    """Map coordinates in a :func:`resize_longside` output back to the original image."""
    if scale == 1.0:
        return np.asarray(pts, dtype=np.float64)
    return (np.asarray(pts, dtype=np.float64) + 0.5) / scale - 0.5


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    return ndimage.gaussian_filter(image, sigma=sigma, mode="nearest")


# ---------------------------------------------------------------------------
# transform samplers


class Difficulty(str, Enum):
    EASY = "easy"
    NORMAL = "normal"
    HARD = "hard"


@dataclass(frozen=True)
class TransformSpec:
    """Symmetric sampling ranges; rotation in degrees, translation as a fraction of size."""

    difficulty: Difficulty | None
    rotation: tuple[float, float]
    translation: float
    scale: tuple[float, float]

    @classmethod
    def for_difficulty(cls, difficulty) -> "TransformSpec":
        d = Difficulty(difficulty)
        return DIFFICULTY_SPECS[d]


DIFFICULTY_SPECS = {
    Difficulty.EASY: TransformSpec(Difficulty.EASY, (-36.0, 36.0), 0.10, (0.9, 1.1)),
    Difficulty.NORMAL: TransformSpec(Difficulty.NORMAL, (-72.0, 72.0), 0.20, (0.8, 1.2)),
    Difficulty.HARD: TransformSpec(Difficulty.HARD, (-180.0, 180.0), 0.30, (0.7, 1.3)),
}


def similarity_about_center(angle_deg: float, scale: float, tx: float, ty: float, width: int, height: int) -> np.ndarray:
    """``T(c + t) @ R(angle) @ S(scale) @ T(-c)`` with ``c`` the image centre."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    a = math.radians(angle_deg)
    c, s = math.cos(a) * scale, math.sin(a) * scale
    return np.array(
        [
            [c, -s, cx + tx - (c * cx - s * cy)],
            [s, c, cy + ty - (s * cx + c * cy)],
            [0.0, 0.0, 1.0],
        ]
    )


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    return float(lo) if hi <= lo else float(rng.uniform(lo, hi))


def sample_transform(spec: TransformSpec, seed, width: int = 512, height: int = 512) -> np.ndarray:
    """Random scale/rotation/translation about the image centre, deterministic per seed.

    The canvas stays fixed; Hard mode's large rotations simply turn the
    content about the centre.
    """
    rng = np.random.default_rng(seed)
    angle = _uniform(rng, *spec.rotation)
    scale = _uniform(rng, *spec.scale)
    tx = _uniform(rng, -spec.translation, spec.translation) * width
    ty = _uniform(rng, -spec.translation, spec.translation) * height
    return similarity_about_center(angle, scale, tx, ty, width, height)


@dataclass(frozen=True)
class AugmentationConfig:
    rotation: tuple[float, float] = (-180.0, 180.0)
    scale: tuple[float, float] = (0.5, 1.5)
    translation: tuple[float, float] = (0.0, 0.5)
    perspective_jitter: float = 0.02


def homography_from_points(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Exact DLT through >= 4 correspondences (unnormalised; for well-spread corners)."""
    rows = []
    for (x, y), (u, v) in zip(src, dst):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y, -u])
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y, -v])
    _, _, vt = np.linalg.svd(np.asarray(rows, dtype=np.float64))
    return normalize_homography(vt[-1].reshape(3, 3))


def sample_training_augmentation(seed, width: int = 512, height: int = 512, config: AugmentationConfig | None = None) -> np.ndarray:
    """Training-time random perspective transform.

    Rotation, scale and a translation whose per-axis magnitude falls in the
    configured range (random sign), followed by independent jitter of the
    four corner images of up to ``perspective_jitter`` of the image size.
    """
    cfg = config or AugmentationConfig()
    rng = np.random.default_rng(seed)
    angle = _uniform(rng, *cfg.rotation)
    scale = _uniform(rng, *cfg.scale)
    mags = [_uniform(rng, *cfg.translation) for _ in range(2)]
    signs = rng.choice([-1.0, 1.0], size=2)
    H = similarity_about_center(angle, scale, signs[0] * mags[0] * width, signs[1] * mags[1] * height, width, height)
    if cfg.perspective_jitter <= 0:
        return H
    corners = image_corners(width, height)
    moved = project(H, corners)
    jitter = rng.uniform(-1, 1, size=(4, 2)) * cfg.perspective_jitter * np.array([width, height])
    return homography_from_points(corners, moved + jitter)


def image_corners(width: int, height: int) -> np.ndarray:
    return np.array([[0.0, 0.0], [width - 1.0, 0.0], [width - 1.0, height - 1.0], [0.0, height - 1.0]])


def decompose_similarity(H: np.ndarray, width: int, height: int) -> tuple[float, float, float, float]:
    """Least-squares similarity fit through the projected corners.

    Returns ``(angle_deg, scale, tx, ty)`` in the parametrisation of
    :func:`similarity_about_center`.
    """
    corners = image_corners(width, height)
    moved = project(H, corners)
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    p = corners - c
    q = moved - c
    # q = [[a, -b], [b, a]] p + t
    A = np.zeros((8, 4))
    A[0::2] = np.c_[p[:, 0], -p[:, 1], np.ones(4), np.zeros(4)]
    A[1::2] = np.c_[p[:, 1], p[:, 0], np.zeros(4), np.ones(4)]
    a, b, tx, ty = np.linalg.lstsq(A, q.reshape(-1), rcond=None)[0]
    return math.degrees(math.atan2(b, a)), math.hypot(a, b), tx, ty


# ---------------------------------------------------------------------------
# pair manifests


@dataclass(frozen=True)
class PairRecord:
    pair_id: str
    src: Path
    ref: Path
    H: np.ndarray | None

    @property
    def homography(self) -> np.ndarray:
        return np.eye(3) if self.H is None else self.H


def read_manifest(path) -> list[PairRecord]:
    """One JSON object per line: ``src``, ``ref`` and optional 9-number ``H`` (src -> ref).

    Relative paths resolve against the manifest's directory; a missing ``H``
    marks a pre-aligned pair.
    """
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        if "src" not in obj or "ref" not in obj:
            raise ValueError(f"{path}:{lineno}: manifest entry needs 'src' and 'ref'")
        H = None
        if obj.get("H") is not None:
            vals = np.asarray(obj["H"], dtype=np.float64)
            if vals.size != 9:
                raise ValueError(f"{path}:{lineno}: H must have 9 numbers")
            H = check_homography(vals.reshape(3, 3))
        src = Path(obj["src"])
        ref = Path(obj["ref"])
        pair_id = str(obj.get("id", f"{src.as_posix()}|{ref.as_posix()}"))
        records.append(PairRecord(pair_id, src if src.is_absolute() else path.parent / src, ref if ref.is_absolute() else path.parent / ref, H))
    return records


def write_manifest(path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
