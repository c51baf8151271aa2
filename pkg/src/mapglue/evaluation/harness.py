"""Homography-AUC evaluation over Easy/Normal/Hard simulated warps."""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import jsonio
from ..imaging import DIFFICULTY_SPECS, Difficulty, ImageFormatError, load_png, project, read_manifest, sample_transform, warp
from ..matcher.model import MatcherModel
from ..matcher.pipeline import ImageFeatures, Matcher
from .metrics import AUC_THRESHOLDS, auc, corner_error
from .ransac import RANSAC_CONFIDENCE, RANSAC_ITERATIONS, RANSAC_THRESHOLD, EstimationError, ransac_homography

log = logging.getLogger(__name__)

DIFFICULTY_ORDER = (Difficulty.EASY, Difficulty.NORMAL, Difficulty.HARD)


@dataclass
class EvalPair:
    """A source/reference pair; images may be arrays or PNG paths.  ``H`` maps src -> ref."""

    pair_id: str
    src: np.ndarray | Path
    ref: np.ndarray | Path
    H: np.ndarray = field(default_factory=lambda: np.eye(3))

    def load(self) -> tuple[np.ndarray, np.ndarray]:
        src = self.src if isinstance(self.src, np.ndarray) else load_png(self.src)
        ref = self.ref if isinstance(self.ref, np.ndarray) else load_png(self.ref)
        return src, ref


def pairs_from_manifest(path) -> list[EvalPair]:
    return [EvalPair(r.pair_id, r.src, r.ref, r.homography) for r in read_manifest(path)]


def pairs_from_synth(synth) -> list[EvalPair]:
    return [EvalPair(f"synth-{p.seed}", p.src, p.ref, p.H) for p in synth]


@dataclass
class EvalRecord:
    pair_id: str
    difficulty: str
    repeat: int
    seed: int
    error: float  # mean corner error in px, inf on estimation failure
    n_matches: int
    n_inliers: int

    @property
    def failed(self) -> bool:
        return math.isinf(self.error)


@dataclass
class DifficultyReport:
    difficulty: str
    auc3: float  # percent
    auc5: float
    auc10: float
    pairs: int
    failures: int


@dataclass
class Report:
    rows: list[DifficultyReport]
    records: list[EvalRecord]
    config: dict

    def row(self, difficulty) -> DifficultyReport:
        d = Difficulty(difficulty).value
        for r in self.rows:
            if r.difficulty == d:
                return r
        raise KeyError(d)

    def to_dict(self) -> dict:
        return {
            "results": [dict(asdict(r), config=self.config) for r in self.rows],
            "records": [asdict(r) for r in self.records],
        }

    def to_json(self) -> str:
        return jsonio.dumps(self.to_dict()) + "\n"

    def table(self) -> str:
        head = " " * 10 + "".join(f"{r.difficulty.capitalize():^24}" for r in self.rows)
        sub = f"{'AUC (%)':<10}" + "".join("".join(f"{'@' + str(t) + 'px':>8}" for t in AUC_THRESHOLDS) for _ in self.rows)
        vals = f"{'':<10}" + "".join(f"{r.auc3:8.2f}{r.auc5:8.2f}{r.auc10:8.2f}" for r in self.rows)
        foot = f"{'failures':<10}" + "".join(f"{f'{r.failures}/{r.pairs}':^24}" for r in self.rows)
        return "\n".join([head, sub, vals, foot]) + "\n"


# -- matchers ----------------------------------------------------------------
#
# A matcher is any picklable callable
#   matcher(src, ref, *, H_gt, rng, pair_id) -> (pts_src (K, 2), pts_ref (K, 2))
# in original image coordinates.  ``H_gt`` and ``rng`` exist for the stubs.


class ModelMatcher:
    """Adapter running the full pipeline; caches reference features per pair."""

    name = "model"

    def __init__(self, model: MatcherModel):
        self.matcher = Matcher(model)
        self._ref_cache: dict[str, ImageFeatures] = {}

    def __getstate__(self):
        return {"matcher": self.matcher, "_ref_cache": {}}

    def describe(self) -> dict:
        return {"name": self.name, "matcher": self.matcher.config.to_dict()}

    def __call__(self, src, ref, *, H_gt=None, rng=None, pair_id=None):
        fr = self._ref_cache.get(pair_id) if pair_id is not None else None
        if fr is None:
            fr = self.matcher.extract(ref)
            if pair_id is not None:
                self._ref_cache = {pair_id: fr}
        res = self.matcher.match_features(self.matcher.extract(src), fr)
        return res.pts_src, res.pts_ref


class OracleMatcher:
    """Ground-truth correspondences with Gaussian noise on the reference side."""

    name = "oracle"

    def __init__(self, sigma: float = 0.5, n: int = 512):
        self.sigma = sigma
        self.n = n

    def describe(self) -> dict:
        return {"name": self.name, "sigma": self.sigma, "n": self.n}

    def __call__(self, src, ref, *, H_gt, rng, pair_id=None):
        h, w = src.shape[:2]
        hr, wr = ref.shape[:2]
        p = rng.uniform([0, 0], [w - 1, h - 1], size=(self.n, 2))
        q = project(H_gt, p)
        inside = (q[:, 0] >= 0) & (q[:, 0] <= wr - 1) & (q[:, 1] >= 0) & (q[:, 1] <= hr - 1)
        p, q = p[inside], q[inside]
        return p, q + rng.normal(0.0, self.sigma, size=q.shape)


class RandomMatcher:
    """Uniformly random, unrelated points in both images."""

    name = "random"

    def __init__(self, n: int = 512):
        self.n = n

    def describe(self) -> dict:
        return {"name": self.name, "n": self.n}

    def __call__(self, src, ref, *, H_gt=None, rng, pair_id=None):
        h, w = src.shape[:2]
        hr, wr = ref.shape[:2]
        return rng.uniform([0, 0], [w - 1, h - 1], size=(self.n, 2)), rng.uniform([0, 0], [wr - 1, hr - 1], size=(self.n, 2))


# -- evaluation --------------------------------------------------------------


def record_seed(master_seed: int, pair_id: str, difficulty, repeat: int) -> int:
    """Per-record seed from the master seed, pair id, difficulty and repeat alone."""
    d = DIFFICULTY_ORDER.index(Difficulty(difficulty))
    seq = np.random.SeedSequence([master_seed, zlib.crc32(pair_id.encode("utf-8")), d, repeat])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def evaluate_instance(src, ref, H, matcher, difficulty, seed: int, pair_id: str = ""):
    """One simulated warp: returns ``(error, n_matches, n_inliers)``."""
    h, w = src.shape[:2]
    T = sample_transform(DIFFICULTY_SPECS[Difficulty(difficulty)], [seed, 0], w, h)
    warped, _ = warp(src, T, (w, h))
    H_gt = H @ np.linalg.inv(T)
    pts_src, pts_ref = matcher(warped, ref, H_gt=H_gt, rng=np.random.default_rng([seed, 1]), pair_id=pair_id)
    n = len(pts_src)
    try:
        res = ransac_homography(pts_src, pts_ref, RANSAC_THRESHOLD, RANSAC_ITERATIONS, RANSAC_CONFIDENCE, seed=[seed, 2])
    except EstimationError:
        return math.inf, n, 0
    return corner_error(H_gt, res.H, w, h), n, res.n_inliers


def _evaluate_pair(args) -> tuple[list[EvalRecord], bool]:
    pair, matcher, difficulties, repeats, master_seed = args
    try:
        src, ref = pair.load()
    except (ImageFormatError, OSError) as exc:
        log.warning("skipping pair %s: %s", pair.pair_id, exc)
        return [], False
    records = []
    for d in difficulties:
        for r in range(repeats):
            s = record_seed(master_seed, pair.pair_id, d, r)
            e, n, k = evaluate_instance(src, ref, pair.H, matcher, d, s, pair.pair_id)
            records.append(EvalRecord(pair.pair_id, Difficulty(d).value, r, s, e, n, k))
    return records, True


def evaluate(pairs, matcher, difficulties=DIFFICULTY_ORDER, repeats: int = 5, seed: int = 0, workers: int = 1, config: dict | None = None) -> Report:
    """Run every pair under every difficulty ``repeats`` times.

    Records are sorted by (difficulty, pair id, repeat) before AUCs are
    computed, so pair order and worker count do not affect the report.
    """
    if isinstance(pairs, (str, Path)):
        pairs = pairs_from_manifest(pairs)
    difficulties = [Difficulty(d) for d in difficulties]
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    jobs = [(p, matcher, difficulties, repeats, seed) for p in pairs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_evaluate_pair, jobs))
    else:
        results = [_evaluate_pair(j) for j in jobs]
    records = [rec for recs, _ in results for rec in recs]
    skipped = sum(1 for _, ok in results if not ok)
    order = {d.value: i for i, d in enumerate(DIFFICULTY_ORDER)}
    records.sort(key=lambda r: (order[r.difficulty], r.pair_id, r.repeat))

    rows = []
    for d in difficulties:
        errs = [r.error for r in records if r.difficulty == d.value]
        fails = sum(1 for e in errs if math.isinf(e)) + skipped * repeats
        aucs = [100.0 * auc(errs, t) if errs else 0.0 for t in AUC_THRESHOLDS]
        rows.append(DifficultyReport(d.value, *aucs, pairs=len(pairs) - skipped, failures=fails))
    echo = {
        "seed": seed,
        "repeats": repeats,
        "difficulties": [d.value for d in difficulties],
        "ransac": {"threshold": RANSAC_THRESHOLD, "iterations": RANSAC_ITERATIONS, "confidence": RANSAC_CONFIDENCE},
        "thresholds": list(AUC_THRESHOLDS),
    }
    if hasattr(matcher, "describe"):
        echo["matcher"] = matcher.describe()
    echo.update(config or {})
    return Report(rows, records, echo)
