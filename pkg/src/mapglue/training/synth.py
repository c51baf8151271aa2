"""Procedural map/photo pairs standing in for real multimodal training data.

A random scene (roads, buildings, water, parks) is rasterised once in the
map frame over an enlarged canvas.  The map modality paints flat
cartographic colours; the photo modality paints textured, shaded surfaces
with a non-linear intensity response and is then resampled into its own
frame through the ground-truth homography (photo -> map).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw
from scipy import ndimage

from ..imaging import DIFFICULTY_SPECS, Difficulty, gaussian_blur, sample_transform, to_grayscale, warp

SIZE = 512
MARGIN = 224
SUPERSAMPLE = 2

BACKGROUND, PARK, WATER, BUILDING, ROAD = range(5)

MAP_COLORS = {
    BACKGROUND: (0.95, 0.94, 0.91),
    PARK: (0.76, 0.90, 0.72),
    WATER: (0.60, 0.76, 0.90),
    BUILDING: (0.80, 0.74, 0.70),
    ROAD: (1.00, 0.84, 0.52),
}
MAP_OUTLINE = (0.62, 0.56, 0.54)

ROOF_PALETTE = [(0.62, 0.30, 0.24), (0.56, 0.56, 0.56), (0.72, 0.66, 0.60), (0.34, 0.34, 0.40), (0.80, 0.78, 0.74)]


@dataclass
class SynthPair:
    map_image: np.ndarray  # (512, 512, 3), reference modality
    photo_image: np.ndarray  # (512, 512, 3), source modality
    H: np.ndarray  # photo -> map
    seed: int
    map_roads: np.ndarray  # bool road mask in the map frame
    photo_roads: np.ndarray  # road coverage in [0, 1], photo frame

    @property
    def src(self) -> np.ndarray:
        return self.photo_image

    @property
    def ref(self) -> np.ndarray:
        return self.map_image


def _blob(rng, cx, cy, radius, n=14):
    ang = np.sort(rng.uniform(0, 2 * math.pi, n))
    rad = radius * rng.uniform(0.6, 1.2, n)
    return [(cx + r * math.cos(a), cy + r * math.sin(a)) for a, r in zip(ang, rad)]


def _rect(cx, cy, w, h, angle):
    c, s = math.cos(angle), math.sin(angle)
    pts = [(-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2)]
    return [(cx + x * c - y * s, cy + x * s + y * c) for x, y in pts]


def _scene(rng: np.random.Generator, canvas: int):
    """Random vector geometry in canvas pixels."""
    shapes = []  # (class, kind, points, width)
    for _ in range(rng.integers(1, 4)):
        shapes.append((PARK, "poly", _blob(rng, *rng.uniform(0, canvas, 2), rng.uniform(30, 90)), 0))
    for _ in range(rng.integers(0, 3)):
        shapes.append((WATER, "poly", _blob(rng, *rng.uniform(0, canvas, 2), rng.uniform(30, 100)), 0))
    buildings = []
    for _ in range(rng.integers(120, 200)):
        w, h = rng.uniform(8, 30, 2)
        buildings.append(_rect(*rng.uniform(0, canvas, 2), w, h, rng.uniform(0, math.pi)))
    shapes += [(BUILDING, "poly", b, 0) for b in buildings]
    for _ in range(rng.integers(3, 6)):
        side = rng.integers(4)
        t = rng.uniform(0, canvas)
        start = [(t, 0.0), (canvas, t), (t, canvas), (0.0, t)][side]
        heading = [math.pi / 2, math.pi, -math.pi / 2, 0.0][side] + rng.uniform(-0.5, 0.5)
        pts = [start]
        x, y = start
        for _ in range(rng.integers(3, 7)):
            step = rng.uniform(120, 320)
            heading += rng.uniform(-0.6, 0.6)
            x, y = x + step * math.cos(heading), y + step * math.sin(heading)
            pts.append((x, y))
        shapes.append((ROAD, "line", pts, float(rng.uniform(5, 12))))
    # one through-road crossing the visible crop, so no tile is road-free
    cx, cy = rng.uniform(MARGIN + 64, MARGIN + SIZE - 64, 2)
    heading = rng.uniform(0, math.pi)
    bend = heading + rng.uniform(-0.4, 0.4)
    pts = [(cx - canvas * math.cos(heading), cy - canvas * math.sin(heading)), (cx, cy), (cx + canvas * math.cos(bend), cy + canvas * math.sin(bend))]
    shapes.append((ROAD, "line", pts, float(rng.uniform(6, 12))))
    return shapes


def _rasterize(shapes, canvas: int, ss: int = SUPERSAMPLE):
    """Per-class coverage fractions and building ids at canvas resolution."""
    big = canvas * ss
    label = PILImage.new("L", (big, big), BACKGROUND)
    ids = PILImage.new("I", (big, big), 0)
    dl = ImageDraw.Draw(label)
    di = ImageDraw.Draw(ids)
    outline = PILImage.new("L", (big, big), 0)
    do = ImageDraw.Draw(outline)
    bid = 0
    for cls, kind, pts, width in shapes:
        scaled = [(x * ss, y * ss) for x, y in pts]
        if kind == "poly":
            dl.polygon(scaled, fill=cls)
            if cls == BUILDING:
                bid += 1
                di.polygon(scaled, fill=bid)
                do.polygon(scaled, outline=255, width=ss)
        else:
            dl.line(scaled, fill=cls, width=int(round(width * ss)), joint="curve")
            do.line(scaled, fill=0, width=int(round(width * ss)), joint="curve")
            di.line(scaled, fill=0, width=int(round(width * ss)), joint="curve")
    lab = np.asarray(label)
    cover = np.stack([(lab == c) for c in range(5)], axis=-1).astype(np.float32)
    cover = cover.reshape(canvas, ss, canvas, ss, 5).mean(axis=(1, 3))
    edge = (np.asarray(outline) > 0).astype(np.float32).reshape(canvas, ss, canvas, ss).mean(axis=(1, 3))
    ids_arr = np.asarray(ids, dtype=np.int64)[::ss, ::ss]
    return cover, edge, ids_arr, bid


def _noise(rng, shape, sigmas=(1.0, 2.0, 4.0, 8.0)):
    """Sum of blurred white-noise octaves, roughly unit variance."""
    out = np.zeros(shape)
    for i, s in enumerate(sigmas):
        n = gaussian_blur(rng.standard_normal(shape), s)
        n /= n.std() + 1e-12
        out += n * 0.5**i
    return out / np.sqrt(sum(0.25**i for i in range(len(sigmas))))


def render_map(cover: np.ndarray, edge: np.ndarray) -> np.ndarray:
    img = np.zeros(cover.shape[:2] + (3,))
    for cls, col in MAP_COLORS.items():
        img += cover[..., cls : cls + 1] * np.asarray(col)
    e = edge[..., None]
    img = img * (1 - e) + e * np.asarray(MAP_OUTLINE)
    return np.clip(img, 0, 1)


def render_photo(rng: np.random.Generator, cover: np.ndarray, ids: np.ndarray, n_buildings: int) -> np.ndarray:
    shape = cover.shape[:2]
    fine = _noise(rng, shape, (0.7, 1.5))
    coarse = _noise(rng, shape, (4.0, 8.0, 16.0))
    layers = {
        BACKGROUND: np.asarray([0.46, 0.50, 0.32]) + (0.10 * coarse + 0.05 * fine)[..., None],
        PARK: np.asarray([0.18, 0.32, 0.14]) + (0.10 * fine + 0.04 * coarse)[..., None],
        WATER: np.asarray([0.10, 0.19, 0.24]) + (0.02 * coarse)[..., None],
        ROAD: np.asarray([0.36, 0.36, 0.37]) + (0.03 * fine)[..., None],
    }
    roofs = np.asarray(ROOF_PALETTE)[rng.integers(0, len(ROOF_PALETTE), n_buildings + 1)]
    roofs = roofs * rng.uniform(0.85, 1.15, (n_buildings + 1, 1))
    layers[BUILDING] = roofs[ids] + (0.03 * fine)[..., None]

    img = np.zeros(shape + (3,))
    for cls, layer in layers.items():
        img += cover[..., cls : cls + 1] * layer
    # cast shadows: building coverage shifted along the sun direction
    sun = rng.uniform(0, 2 * math.pi)
    shift = (3.5 * math.sin(sun), 3.5 * math.cos(sun))
    shadow = ndimage.shift(cover[..., BUILDING], shift, order=1, mode="constant")
    shadow = np.clip(shadow - cover[..., BUILDING], 0, 1)
    img *= (1 - 0.45 * shadow)[..., None]
    illum = 1.0 + 0.12 * _noise(rng, shape, (48.0, 96.0))
    img *= illum[..., None]
    img = gaussian_blur(np.clip(img, 0, 1), (0.6, 0.6, 0))
    gamma = rng.uniform(0.7, 1.4)
    return np.clip(img, 0, 1) ** gamma


def make_pair(seed: int, difficulty=Difficulty.EASY) -> SynthPair:
    rng = np.random.default_rng(seed)
    canvas = SIZE + 2 * MARGIN
    cover, edge, ids, nb = _rasterize(_scene(rng, canvas), canvas)
    world_map = render_map(cover, edge)
    world_photo = render_photo(rng, cover, ids, nb)
    H = sample_transform(DIFFICULTY_SPECS[Difficulty(difficulty)], rng.integers(2**31), SIZE, SIZE)
    # photo pixel p samples the canvas at H p + margin
    to_canvas = np.array([[1.0, 0, MARGIN], [0, 1.0, MARGIN], [0, 0, 1.0]]) @ H
    photo, _ = warp(world_photo, np.linalg.inv(to_canvas), (SIZE, SIZE))
    photo_roads, _ = warp(cover[..., ROAD].astype(np.float64), np.linalg.inv(to_canvas), (SIZE, SIZE))
    crop = (slice(MARGIN, MARGIN + SIZE), slice(MARGIN, MARGIN + SIZE))
    return SynthPair(
        map_image=world_map[crop].copy(),
        photo_image=photo,
        H=H,
        seed=seed,
        map_roads=cover[crop][..., ROAD] >= 0.5,
        photo_roads=photo_roads,
    )


def synth_pairs(n: int, seed: int) -> list[SynthPair]:
    if n < 1:
        raise ValueError("n must be at least 1")
    seeds = np.random.SeedSequence(seed).generate_state(n)
    return [make_pair(int(s)) for s in seeds]


def histogram_chi2(a: np.ndarray, b: np.ndarray, bins: int = 32) -> float:
    """Symmetric chi-square distance between grey-level histograms."""
    ha, _ = np.histogram(to_grayscale(a), bins=bins, range=(0, 1))
    hb, _ = np.histogram(to_grayscale(b), bins=bins, range=(0, 1))
    ha = ha / ha.sum()
    hb = hb / hb.sum()
    denom = ha + hb
    nz = denom > 0
    return float(0.5 * np.sum((ha[nz] - hb[nz]) ** 2 / denom[nz]))
