from .harness import (
    DIFFICULTY_ORDER,
    DifficultyReport,
    EvalPair,
    EvalRecord,
    ModelMatcher,
    OracleMatcher,
    RandomMatcher,
    Report,
    evaluate,
    evaluate_instance,
    pairs_from_manifest,
    pairs_from_synth,
    record_seed,
)
from .metrics import AUC_THRESHOLDS, auc, corner_error
from .overlay import match_errors, render_overlay, save_overlay
from .ransac import (
    RANSAC_CONFIDENCE,
    RANSAC_ITERATIONS,
    RANSAC_THRESHOLD,
    EstimationError,
    RansacResult,
    normalized_dlt,
    ransac_homography,
    transfer_errors,
)

__all__ = [
    "AUC_THRESHOLDS",
    "DIFFICULTY_ORDER",
    "DifficultyReport",
    "EstimationError",
    "EvalPair",
    "EvalRecord",
    "ModelMatcher",
    "OracleMatcher",
    "RANSAC_CONFIDENCE",
    "RANSAC_ITERATIONS",
    "RANSAC_THRESHOLD",
    "RandomMatcher",
    "RansacResult",
    "Report",
    "auc",
    "corner_error",
    "evaluate",
    "evaluate_instance",
    "match_errors",
    "normalized_dlt",
    "pairs_from_manifest",
    "pairs_from_synth",
    "ransac_homography",
    "record_seed",
    "render_overlay",
    "save_overlay",
    "transfer_errors",
]
