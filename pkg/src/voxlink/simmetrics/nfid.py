"""Negative Fréchet distance between voxel-feature distributions.

Each volume is treated as a cloud of per-voxel feature vectors and summarised
by their mean and covariance.  The features are deterministic and
handcrafted (multi-scale local statistics pushed through a fixed random
projection); any callable with the :data:`FeatureExtractor` signature can
replace them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import ndimage

from ..errors import EmptyMask, NonConvergentSqrt, ShapeMismatch
from ..volume import AffineTransform, Volume, resample
from .measures import MeasureConfig

logger = logging.getLogger(__name__)

FeatureExtractor = Callable[[np.ndarray, np.ndarray, MeasureConfig], np.ndarray]


@dataclass(frozen=True)
class FeatureEmbedding:
    mean: np.ndarray
    covariance: np.ndarray
    n_voxels: int = 0

    def __post_init__(self):
        mu = np.asarray(self.mean, dtype=np.float64).ravel()
        cov = np.asarray(self.covariance, dtype=np.float64)
        if cov.shape != (mu.size, mu.size):
            raise ValueError(f"covariance shape {cov.shape} does not match mean of length {mu.size}")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-8 * max(1.0, float(np.abs(cov).max(initial=0)))):
            raise ValueError("covariance is not symmetric")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "covariance", 0.5 * (cov + cov.T))

    def __eq__(self, other):
        if not isinstance(other, FeatureEmbedding):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.covariance, other.covariance)

    __hash__ = None  # type: ignore[assignment]


def base_features(data: np.ndarray, mask: np.ndarray, sigmas) -> np.ndarray:
    """Intensity plus local mean, variance, gradient magnitude and LoG at each scale.

    ``data`` must already be normalised with the background at 0.  Returns an
    array of shape (n_mask_voxels, 1 + 4 * len(sigmas)).
    """
    cols = [data[mask]]
    for s in sigmas:
        mean = ndimage.gaussian_filter(data, s, mode="nearest")
        var = ndimage.gaussian_filter(data * data, s, mode="nearest") - mean * mean
        grad = ndimage.gaussian_gradient_magnitude(data, s, mode="nearest")
        log = ndimage.gaussian_laplace(data, s, mode="nearest")
        cols.extend([mean[mask], np.maximum(var, 0.0)[mask], grad[mask], log[mask]])
    return np.stack(cols, axis=1)


def projection_matrix(n_in: int, cfg: MeasureConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.nfid_seed)
    return rng.standard_normal((n_in, cfg.nfid_feature_dim)) / np.sqrt(n_in)


def handcrafted_features(data: np.ndarray, mask: np.ndarray, cfg: MeasureConfig) -> np.ndarray:
    """Per-voxel feature vectors of length ``cfg.nfid_feature_dim`` for mask voxels."""
    base = base_features(data, mask, cfg.nfid_sigmas)
    return np.tanh(base @ projection_matrix(base.shape[1], cfg))


def normalize_for_features(data: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Z-score within the mask (centre only if constant); background 0."""
    vals = data[mask]
    sd = float(vals.std())
    out = np.zeros(data.shape, dtype=np.float64)
    out[mask] = (vals - vals.mean()) / sd if sd > 0 else 0.0
    return out


def resample_for_features(v: Volume, cfg: MeasureConfig) -> Volume:
    """``v`` on a ``nfid_resample`` grid covering the same field of view."""
    target = cfg.nfid_resample
    if tuple(v.dims) == tuple(target):
        return v
    extent = np.asarray(v.spacing) * np.asarray(v.dims)
    spacing = extent / np.asarray(target, dtype=np.float64)
    lo = np.asarray(v.origin) - np.asarray(v.spacing) / 2.0
    return resample(v, AffineTransform.identity(), target, tuple(spacing), "trilinear", tuple(lo + spacing / 2.0))


def voxel_features(v, cfg: MeasureConfig = MeasureConfig(), mask=None,
                   extractor: Optional[FeatureExtractor] = None) -> np.ndarray:
    """Per-voxel features after resampling and normalisation, shape (n, dim)."""
    if not isinstance(v, Volume):
        v = Volume(np.asarray(v, dtype=np.float64), mask=None if mask is None else np.asarray(mask, bool))
    elif mask is not None:
        v = v.replace(mask=np.asarray(mask, dtype=bool))
    if v.mask is None:
        v = v.replace(mask=np.ones(v.dims, dtype=bool))
    # zero the background first so interpolation cannot leak it into the brain
    v = resample_for_features(v.replace(data=np.where(v.mask, v.data, 0.0)), cfg)
    m = v.mask
    if m is None or not m.any():
        raise EmptyMask("no mask voxels left to describe")
    data = normalize_for_features(np.asarray(v.data, dtype=np.float64), m)
    return (extractor or handcrafted_features)(data, m, cfg)


def extract_features(v, cfg: MeasureConfig = MeasureConfig(), mask=None,
                     extractor: Optional[FeatureExtractor] = None) -> FeatureEmbedding:
    """Mean and (unbiased) covariance of the per-voxel features of ``v``."""
    feats = voxel_features(v, cfg, mask, extractor)
    mu = feats.mean(axis=0)
    if len(feats) < 2:
        cov = np.zeros((feats.shape[1], feats.shape[1]))
    else:
        centred = feats - mu
        cov = centred.T @ centred / (len(feats) - 1)
    return FeatureEmbedding(mu, cov, len(feats))


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def trace_sqrt_product(sa: np.ndarray, sb: np.ndarray) -> float:
    """Tr((Sa Sb)^(1/2)) as the sum of singular values of Sa^(1/2) Sb^(1/2).

    The eigenvalues of Sa Sb are the squared singular values of that product,
    so no square root of a near-zero (noise dominated) eigenvalue is taken.
    """
    try:
        vals = np.linalg.svd(_psd_sqrt(sa) @ _psd_sqrt(sb), compute_uv=False)
    except np.linalg.LinAlgError as exc:
        raise NonConvergentSqrt(f"singular value decomposition failed: {exc}") from exc
    if not np.all(np.isfinite(vals)):
        raise NonConvergentSqrt("non-finite singular values in the covariance product")
    return float(np.sum(vals))


def negative_fid(a: FeatureEmbedding, b: FeatureEmbedding) -> float:
    """-(|mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^(1/2))); 0 for identical embeddings."""
    if a.mean.shape != b.mean.shape:
        raise ValueError("embeddings have different feature dimensions")
    d = a.mean - b.mean
    dist = float(d @ d) + float(np.trace(a.covariance) + np.trace(b.covariance))
    dist -= 2.0 * trace_sqrt_product(a.covariance, b.covariance)
    return -max(dist, 0.0)


def nfid(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    """Negative Fréchet distance between the feature clouds of ``x`` and ``y``."""
    shape_x = x.dims if isinstance(x, Volume) else np.shape(x)
    shape_y = y.dims if isinstance(y, Volume) else np.shape(y)
    if tuple(shape_x) != tuple(shape_y):
        raise ShapeMismatch(f"shapes differ: {tuple(shape_x)} vs {tuple(shape_y)}")
    return negative_fid(extract_features(x, cfg, mask), extract_features(y, cfg, mask))
