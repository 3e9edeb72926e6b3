"""Thresholding, classification and evaluation of pair scores."""

from ..records import PairScore
from .evaluation import (
    Confusion,
    LabeledPair,
    LinkageReport,
    MeasureResult,
    auc,
    classify,
    confusion,
    enumerate_pairs,
    evaluate,
    histogram_overlap,
    sensitivity_specificity,
)
from .thresholds import (
    ThresholdModel,
    estimate_threshold,
    fixed_threshold,
    gmm_threshold,
    kde_threshold,
    otsu_cut,
    otsu_threshold,
    trim_scores,
)

__all__ = [
    "Confusion",
    "LabeledPair",
    "LinkageReport",
    "MeasureResult",
    "PairScore",
    "ThresholdModel",
    "auc",
    "classify",
    "confusion",
    "enumerate_pairs",
    "estimate_threshold",
    "evaluate",
    "fixed_threshold",
    "gmm_threshold",
    "histogram_overlap",
    "kde_threshold",
    "otsu_cut",
    "otsu_threshold",
    "sensitivity_specificity",
    "trim_scores",
]
