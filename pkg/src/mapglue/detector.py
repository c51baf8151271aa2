"""Saliency-guided keypoint detection.

Gradient saliency sets a per-pixel suppression radius; adaptive NMS then
thins the detection score map with it.  Dense structural/semantic feature
maps either come from FMAP files (an external backbone) or from the
handcrafted fallback banks below.
"""

from __future__ import annotations

import functools
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import bilinear_sample, gaussian_blur, sobel_gradients, to_grayscale

SALIENCY_EPS = 1e-8
DEFAULT_ALPHA = 4.0
DEFAULT_R_MIN = 1.0
DEFAULT_R_MAX = 7.0
DEFAULT_MAX_KEYPOINTS = 2048
DEFAULT_SCORE_FLOOR = 1e-3


@dataclass
class SaliencyMap:
    values: np.ndarray
    alpha: float


@dataclass
class KeypointSet:
    xy: np.ndarray  # (N, 2) float pixel coordinates
    scores: np.ndarray  # (N,)
    image_size: tuple[int, int]  # (width, height)

    def __len__(self) -> int:
        return len(self.scores)

    @classmethod
    def empty(cls, image_size) -> "KeypointSet":
        return cls(np.zeros((0, 2)), np.zeros(0), tuple(image_size))


def saliency_map(gray: np.ndarray, alpha: float = DEFAULT_ALPHA) -> SaliencyMap:
    """Min-max normalised Sobel magnitude raised to ``alpha``."""
    if gray.ndim != 2:
        raise ValueError("saliency_map expects a single-channel image")
    _, _, g = sobel_gradients(gray)
    g_min, g_max = g.min(), g.max()
    ratio = (g - g_min) / (g_max - g_min + SALIENCY_EPS)
    return SaliencyMap(ratio**alpha, alpha)


def radius_map(sal: SaliencyMap, r_min: float = DEFAULT_R_MIN, r_max: float = DEFAULT_R_MAX) -> np.ndarray:
    if r_min > r_max:
        raise ValueError(f"r_min ({r_min}) must not exceed r_max ({r_max})")
    return r_min + (1.0 - sal.values) * (r_max - r_min)


def local_maxima(score: np.ndarray, floor: float) -> np.ndarray:
    """Boolean mask of 8-neighbourhood maxima above ``floor``.

    A pixel must be strictly greater than neighbours that precede it in
    (y, x) order and greater-or-equal to the ones after it, so a plateau
    keeps only its lexicographically first pixel.
    """
    h, w = score.shape
    p = np.pad(score, 1, mode="constant", constant_values=-np.inf)
    c = p[1:-1, 1:-1]
    keep = c > floor
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dy == 0 and dx == 0:
                continue
            nb = p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
            earlier = dy < 0 or (dy == 0 and dx < 0)
            keep &= (c > nb) if earlier else (c >= nb)
    return keep


def anms_detect(
    score_map: np.ndarray,
    r_map: np.ndarray,
    max_kpts: int = DEFAULT_MAX_KEYPOINTS,
    score_floor: float = DEFAULT_SCORE_FLOOR,
) -> KeypointSet:
    """Adaptive NMS over local maxima of ``score_map``.

    Candidates are visited by descending score (ties: smaller y, then x).  A
    candidate is kept when every previously kept point lies at least
    ``r_map`` (read at the candidate) away from it.
    """
    if score_map.shape != r_map.shape:
        raise ValueError(f"score map {score_map.shape} and radius map {r_map.shape} differ in size")
    h, w = score_map.shape
    ys, xs = np.nonzero(local_maxima(score_map, score_floor))
    if len(ys) == 0 or max_kpts <= 0:
        return KeypointSet.empty((w, h))
    sc = score_map[ys, xs]
    order = np.lexsort((xs, ys, -sc))
    ys, xs, sc = ys[order], xs[order], sc[order]
    radii = r_map[ys, xs]

    occupied = np.zeros((h, w), dtype=bool)
    kept: list[int] = []
    for idx in range(len(ys)):
        y, x, r = int(ys[idx]), int(xs[idx]), float(radii[idx])
        if r > 0:
            k = int(math.ceil(r))
            y0, y1 = max(0, y - k), min(h, y + k + 1)
            x0, x1 = max(0, x - k), min(w, x + k + 1)
            win = occupied[y0:y1, x0:x1]
            if win.any():
                oy, ox = np.nonzero(win)
                d2 = (oy + y0 - y) ** 2 + (ox + x0 - x) ** 2
                if np.any(d2 < r * r):
                    continue
        occupied[y, x] = True
        kept.append(idx)
        if len(kept) >= max_kpts:
            break
    kept_arr = np.asarray(kept, dtype=np.int64)
    xy = np.stack([xs[kept_arr], ys[kept_arr]], axis=1).astype(np.float64)
    return KeypointSet(xy, sc[kept_arr].astype(np.float64), (w, h))


# ---------------------------------------------------------------------------
# dense feature maps


@dataclass
class FeatureMap:
    """Channel-last dense map; cell ``(r, c)`` is centred on pixel ``(c * stride, r * stride)``."""

    data: np.ndarray  # (h, w, C) float32
    stride: int

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def check_against(self, width: int, height: int) -> None:
        h, w = self.data.shape[:2]
        if (h, w) != (math.ceil(height / self.stride), math.ceil(width / self.stride)):
            raise ValueError(
                f"feature map {w}x{h} at stride {self.stride} does not cover a {width}x{height} image"
            )


FMAP_MAGIC = b"FMAP"
FMAP_VERSION = 1


def save_fmap(fmap: FeatureMap, path) -> None:
    data = np.asarray(fmap.data, dtype="<f4")
    if data.ndim == 2:
        data = data[..., None]
    h, w, c = data.shape
    header = FMAP_MAGIC + struct.pack("<IIIII", FMAP_VERSION, h, w, c, fmap.stride)
    Path(path).write_bytes(header + np.ascontiguousarray(data).tobytes())


def load_fmap(path) -> FeatureMap:
    buf = Path(path).read_bytes()
    if buf[:4] != FMAP_MAGIC or len(buf) < 24:
        raise ValueError(f"{path}: not an FMAP file")
    version, h, w, c, stride = struct.unpack_from("<IIIII", buf, 4)
    if version != FMAP_VERSION:
        raise ValueError(f"{path}: unsupported FMAP version {version}")
    if stride == 0:
        raise ValueError(f"{path}: stride must be positive")
    n = h * w * c
    if len(buf) != 24 + 4 * n:
        raise ValueError(f"{path}: payload size does not match {h}x{w}x{c}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=24).reshape(h, w, c).astype(np.float32)
    return FeatureMap(data, int(stride))


def _l2_rows(x: np.ndarray) -> np.ndarray:
    n = np.sqrt(np.sum(x * x, axis=-1, keepdims=True))
    out = x / np.maximum(n, 1e-12)
    # all-zero pixels (flat image) get a fixed unit vector so the norm contract holds
    flat = n[..., 0] <= 1e-12
    if np.any(flat):
        out[flat] = 1.0 / math.sqrt(x.shape[-1])
    return out


@functools.lru_cache(maxsize=64)
def _interp_taps(n_out: int, n_in: int, factor: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear-interpolation taps from block means (block k centred at k*f + (f-1)/2)."""
    pos = np.clip((np.arange(n_out) - (factor - 1) / 2.0) / factor, 0, n_in - 1)
    lo = np.minimum(np.floor(pos).astype(int), max(n_in - 2, 0))
    return lo, np.minimum(lo + 1, n_in - 1), (pos - lo)


@functools.lru_cache(maxsize=64)
def _interp_matrix(n_out: int, n_in: int, factor: int) -> np.ndarray:
    lo, hi, t = _interp_taps(n_out, n_in, factor)
    M = np.zeros((n_out, n_in), dtype=np.float32)
    rows = np.arange(n_out)
    np.add.at(M, (rows, lo), 1 - t)
    np.add.at(M, (rows, hi), t)
    return M


def _block_mean(stack: np.ndarray, factor: int) -> np.ndarray:
    """``(C, H, W)`` -> ``(C, ceil(H/f), ceil(W/f))`` means, edge-padded."""
    c, h, w = stack.shape
    ph, pw = -h % factor, -w % factor
    if ph or pw:
        stack = np.pad(stack, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return stack.reshape(c, stack.shape[1] // factor, factor, stack.shape[2] // factor, factor).mean(axis=(2, 4))


def _upsample(stack: np.ndarray, factor: int, h: int, w: int) -> np.ndarray:
    """Bilinear inverse of :func:`_block_mean` as two small matrix products."""
    return _interp_matrix(h, stack.shape[1], factor) @ stack @ _interp_matrix(w, stack.shape[2], factor).T


STRUCTURAL_FACTORS = (1, 2, 4, 8)


def fallback_structural_map(gray: np.ndarray) -> np.ndarray:
    """24-channel contrast-polarity-free bank at pyramid factors 1/2/4/8.

    Per factor: doubled-angle orientation of the structure tensor (two
    channels), its root trace, mean gradient magnitude, a fine band-pass
    magnitude and the local standard deviation.  Every channel is unchanged
    when the image is inverted, so a bright road on a map and a dark road
    on a photo describe alike.  Coarse levels are computed on block means
    and interpolated back to full resolution.
    """
    h, w = gray.shape
    gray = gray.astype(np.float32)
    gx, gy, g = (a / 4.0 for a in sobel_gradients(gray))
    raw = np.stack([gx * gx, gy * gy, gx * gy, g, gray, gray * gray]).astype(np.float32)
    levels = []
    for f in STRUCTURAL_FACTORS:
        low = raw if f == 1 else _block_mean(raw, f)
        jxx, jyy, jxy, mag, mu, mu2 = ndimage.gaussian_filter(low, (0, 1.0, 1.0), truncate=3.0)
        fine = ndimage.gaussian_filter(low[4], 0.5, truncate=3.0)
        tr = jxx + jyy + 1e-6
        feats = np.stack([(jxx - jyy) / tr, 2 * jxy / tr, np.sqrt(tr), mag, np.abs(fine - mu), np.sqrt(np.maximum(mu2 - mu * mu, 0))])
        levels.append(feats if f == 1 else _upsample(feats, f, h, w))
    return _l2_rows(np.concatenate(levels).transpose(1, 2, 0))


SEMANTIC_STRIDE = 4


def fallback_semantic_map(gray: np.ndarray) -> FeatureMap:
    """24-channel isotropic context bank on a stride-4 grid, sigma 4/8/16 px.

    Per scale: mean intensity, local std, mean gradient magnitude, mean
    squared gradient, structure-tensor trace and coherence, edge density,
    and the blurred band-pass magnitude.  None of them depend on edge
    orientation.
    """
    st = SEMANTIC_STRIDE
    # cell (r, c) is centred on pixel (c * st, r * st)
    small = gaussian_blur(gray, st / 2.0)[::st, ::st]
    if min(small.shape) < 3:
        small = np.pad(small, [(0, max(0, 3 - small.shape[0])), (0, max(0, 3 - small.shape[1]))], mode="edge")
    gx, gy, g = sobel_gradients(small)
    gx, gy, g = gx / 4.0, gy / 4.0, g / 4.0
    edge = (g > 0.05).astype(np.float64)
    band = np.abs(small - gaussian_blur(small, 1.0))
    chans = []
    for sigma in (4.0 / st, 8.0 / st, 16.0 / st):
        mu = gaussian_blur(small, sigma)
        var = np.maximum(gaussian_blur(small * small, sigma) - mu * mu, 0.0)
        jxx = gaussian_blur(gx * gx, sigma)
        jyy = gaussian_blur(gy * gy, sigma)
        jxy = gaussian_blur(gx * gy, sigma)
        trace = jxx + jyy
        coherence = np.sqrt((jxx - jyy) ** 2 + 4 * jxy * jxy) / (trace + 1e-6)
        chans += [
            mu,
            np.sqrt(var),
            gaussian_blur(g, sigma),
            gaussian_blur(g * g, sigma),
            trace,
            coherence,
            gaussian_blur(edge, sigma),
            gaussian_blur(band, sigma),
        ]
    h, w = math.ceil(gray.shape[0] / st), math.ceil(gray.shape[1] / st)
    data = _l2_rows(np.stack(chans, axis=-1))[:h, :w]
    return FeatureMap(data.astype(np.float32), st)


@dataclass
class FeatureProvider:
    """Where dense maps come from: ``"imported"`` FMAP data or the ``"fallback"`` banks."""

    mode: str = "fallback"
    score: FeatureMap | None = None
    structural: FeatureMap | None = None
    semantic: FeatureMap | None = None

    @classmethod
    def from_files(cls, prefix) -> "FeatureProvider":
        """Load ``<prefix>.score.fmap``, ``<prefix>.fmap`` (structural), ``<prefix>.sem.fmap``."""
        paths = fmap_paths(prefix)
        return cls(
            "imported",
            score=load_fmap(paths["score"]),
            structural=load_fmap(paths["structural"]),
            semantic=load_fmap(paths["semantic"]),
        )

    def validate(self, width: int, height: int) -> None:
        if self.mode == "fallback":
            return
        if self.mode != "imported":
            raise ValueError(f"unknown feature provider mode {self.mode!r}")
        for name in ("score", "structural", "semantic"):
            fmap = getattr(self, name)
            if fmap is None:
                raise ValueError(f"imported provider is missing the {name} map")
            fmap.check_against(width, height)


def fmap_paths(prefix) -> dict[str, Path]:
    prefix = Path(prefix)
    base = prefix.with_suffix("") if prefix.suffix == ".fmap" else prefix
    return {
        "structural": base.with_name(base.name + ".fmap"),
        "semantic": base.with_name(base.name + ".sem.fmap"),
        "score": base.with_name(base.name + ".score.fmap"),
    }


def upsample_to_pixels(fmap: FeatureMap, width: int, height: int) -> np.ndarray:
    """Bilinear resampling of a single-channel map to full resolution."""
    if fmap.stride == 1 and fmap.data.shape[:2] == (height, width):
        return fmap.data[..., 0].astype(np.float64)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    return bilinear_sample(fmap.data[..., 0].astype(np.float64), xs / fmap.stride, ys / fmap.stride, mode="clamp")


def structural_features(image: np.ndarray, provider: FeatureProvider, alpha: float = DEFAULT_ALPHA) -> tuple[np.ndarray, FeatureMap]:
    """Detection score map (full resolution) and the dense structural descriptor map."""
    gray = to_grayscale(image)
    h, w = gray.shape
    provider.validate(w, h)
    if provider.mode == "imported":
        return upsample_to_pixels(provider.score, w, h), provider.structural
    return saliency_map(gray, alpha).values, FeatureMap(fallback_structural_map(gray), 1)


def semantic_features(image: np.ndarray, provider: FeatureProvider) -> FeatureMap:
    gray = to_grayscale(image)
    h, w = gray.shape
    provider.validate(w, h)
    if provider.mode == "imported":
        return provider.semantic
    return fallback_semantic_map(gray)


@dataclass(frozen=True)
class DetectorConfig:
    alpha: float = DEFAULT_ALPHA
    r_min: float = DEFAULT_R_MIN
    r_max: float = DEFAULT_R_MAX
    max_keypoints: int = DEFAULT_MAX_KEYPOINTS
    score_floor: float = DEFAULT_SCORE_FLOOR


def detect(image: np.ndarray, provider: FeatureProvider, config: DetectorConfig = DetectorConfig()):
    """Run saliency + ANMS; returns ``(keypoints, structural map, semantic map)``."""
    gray = to_grayscale(image)
    sal = saliency_map(gray, config.alpha)
    if provider.mode == "fallback":
        score, d_str = sal.values, FeatureMap(fallback_structural_map(gray), 1)
    else:
        score, d_str = structural_features(image, provider, config.alpha)
    radii = radius_map(sal, config.r_min, config.r_max)
    kpts = anms_detect(score, radii, config.max_keypoints, config.score_floor)
    return kpts, d_str, semantic_features(image, provider)
