"""Dual-graph transformer matcher."""

from .graphs import (
    InterGraph,
    IntraGraph,
    build_inter_graph,
    build_intra_graph,
    cosine_similarity,
    epsilon_schedule,
    max_pairwise_distance,
)
from .model import DEFAULT_TAU, MatcherConfig, MatcherModel, MatchSet, SoftMatch, dual_softmax, extract_matches
from .pipeline import ImageFeatures, Matcher, MatchResult, match_pipeline
from .rope import basis_vectors, rope, rotation_tables

__all__ = [
    "InterGraph",
    "IntraGraph",
    "build_inter_graph",
    "build_intra_graph",
    "cosine_similarity",
    "epsilon_schedule",
    "max_pairwise_distance",
    "DEFAULT_TAU",
    "MatcherConfig",
    "MatcherModel",
    "MatchSet",
    "SoftMatch",
    "dual_softmax",
    "extract_matches",
    "ImageFeatures",
    "Matcher",
    "MatchResult",
    "match_pipeline",
    "basis_vectors",
    "rope",
    "rotation_tables",
]
