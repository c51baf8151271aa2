from .labels import IGNORE, NEG, POS, TH_NEG, TH_POS, LabelSets, LossBreakdown, labels_from_distance, make_labels, quadruplet_loss, reprojection_distance
from .synth import SynthPair, histogram_chi2, make_pair, synth_pairs
from .train import TrainConfig, Trainer, TrainingPair, augmentation_seed, load_training_pairs, smoothed

__all__ = [
    "IGNORE",
    "NEG",
    "POS",
    "TH_NEG",
    "TH_POS",
    "LabelSets",
    "LossBreakdown",
    "SynthPair",
    "TrainConfig",
    "Trainer",
    "TrainingPair",
    "augmentation_seed",
    "histogram_chi2",
    "labels_from_distance",
    "load_training_pairs",
    "make_labels",
    "make_pair",
    "quadruplet_loss",
    "reprojection_distance",
    "smoothed",
    "synth_pairs",
]
