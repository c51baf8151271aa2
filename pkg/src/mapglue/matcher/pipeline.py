"""End-to-end matching: resize, detect, describe, transformer, extract."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..descriptors import DescriptorBundle, describe
from ..detector import DetectorConfig, FeatureProvider, KeypointSet, detect
from ..imaging import resize_longside, unscale_points
from ..numerics import no_grad
from .model import MatcherConfig, MatcherModel, MatchSet, SoftMatch, extract_matches


@dataclass
class ImageFeatures:
    keypoints: KeypointSet  # coordinates in the resized frame
    bundle: DescriptorBundle
    scale: float
    size: tuple[int, int]  # resized (width, height)

    @property
    def xy_original(self) -> np.ndarray:
        return unscale_points(self.keypoints.xy, self.scale)


@dataclass
class MatchResult:
    matches: MatchSet
    kpts_src: np.ndarray  # all source keypoints, original resolution
    kpts_ref: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def pts_src(self) -> np.ndarray:
        return self.kpts_src[self.matches.src_idx]

    @property
    def pts_ref(self) -> np.ndarray:
        return self.kpts_ref[self.matches.ref_idx]


def detector_config(cfg: MatcherConfig) -> DetectorConfig:
    return DetectorConfig(cfg.alpha, cfg.r_min, cfg.r_max, cfg.max_keypoints, cfg.score_floor)


class Matcher:
    def __init__(self, model: MatcherModel | None = None):
        self.model = model or MatcherModel()

    @property
    def config(self) -> MatcherConfig:
        return self.model.config

    def extract(self, image: np.ndarray, provider: FeatureProvider | None = None) -> ImageFeatures:
        small, scale = resize_longside(image, self.config.resize_limit)
        kpts, d_str, d_sem = detect(small, provider or FeatureProvider(), detector_config(self.config))
        h, w = small.shape[:2]
        return ImageFeatures(kpts, describe(kpts.xy, d_str, d_sem), scale, (w, h))

    def soft_match(self, fs: ImageFeatures, fr: ImageFeatures) -> SoftMatch:
        return self.model.forward(fs.bundle, fr.bundle, fs.size, fr.size)

    def match_features(self, fs: ImageFeatures, fr: ImageFeatures) -> MatchResult:
        diag = {
            "n_kpts_src": len(fs.keypoints),
            "n_kpts_ref": len(fr.keypoints),
            "scale_src": fs.scale,
            "scale_ref": fr.scale,
            "no_keypoints": len(fs.keypoints) == 0 or len(fr.keypoints) == 0,
        }
        if diag["no_keypoints"]:
            matches = MatchSet.empty(len(fs.keypoints), len(fr.keypoints))
        else:
            with no_grad():
                soft = self.soft_match(fs, fr)
            matches = extract_matches(soft.P.data, self.config.tau)
        return MatchResult(matches, fs.xy_original, fr.xy_original, diag)

    def match(self, img_src, img_ref, provider_src: FeatureProvider | None = None, provider_ref: FeatureProvider | None = None) -> MatchResult:
        return self.match_features(self.extract(img_src, provider_src), self.extract(img_ref, provider_ref))


def match_pipeline(img_src, img_ref, model: MatcherModel, provider_src=None, provider_ref=None) -> MatchResult:
    return Matcher(model).match(img_src, img_ref, provider_src, provider_ref)
