"""Similarity measures between harmonized volumes (higher = more similar)."""

from .measures import (
    MeasureConfig,
    MeasureId,
    cosine_similarity,
    gradient_similarity,
    mutual_information,
    negative_mse,
    normalized_mutual_information,
    parse_measures,
    pearson,
    psnr,
)
from .nfid import FeatureEmbedding, extract_features, negative_fid, nfid
from .scoring import MEASURE_FUNCTIONS, cohort_mask, score_all_pairs, score_pair
from .structural import gr_ssim_4, ms_ssim, ssim

__all__ = [
    "FeatureEmbedding",
    "MEASURE_FUNCTIONS",
    "MeasureConfig",
    "MeasureId",
    "cohort_mask",
    "cosine_similarity",
    "extract_features",
    "gr_ssim_4",
    "gradient_similarity",
    "ms_ssim",
    "mutual_information",
    "negative_fid",
    "negative_mse",
    "nfid",
    "normalized_mutual_information",
    "parse_measures",
    "pearson",
    "psnr",
    "score_all_pairs",
    "score_pair",
    "ssim",
]
