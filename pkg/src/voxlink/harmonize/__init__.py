"""Registration and intensity harmonization."""

from .intensity import bias_correct, derive_brain_mask, histogram_match, skull_strip, zscore_normalize
from .pipeline import HarmonizationStages, harmonize_arms, harmonize_pipeline, intensity_reference
from .registration import RegistrationConfig, register_affine, transform_error

__all__ = [
    "HarmonizationStages",
    "RegistrationConfig",
    "bias_correct",
    "derive_brain_mask",
    "harmonize_arms",
    "harmonize_pipeline",
    "histogram_match",
    "intensity_reference",
    "register_affine",
    "skull_strip",
    "transform_error",
    "zscore_normalize",
]
