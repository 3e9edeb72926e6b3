"""Measure identifiers, configuration and the histogram / moment based measures.

Every measure is oriented so that a higher score means more similar.  All of
them take two equally shaped arrays (or :class:`~voxlink.volume.Volume`
objects) plus an optional mask; voxels outside the mask are set to zero
before anything is computed, so they can never influence a score.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from ..errors import DegenerateIntensities, ShapeMismatch, UnknownMeasure, ZeroVector
from ..volume import Volume

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class MeasureId(str, enum.Enum):
    MI = "MI"
    NMI = "NMI"
    NMSE = "NMSE"
    PSNR = "PSNR"
    PCC = "PCC"
    COSSIM = "COSSIM"
    GRADSIM = "GRADSIM"
    SSIM = "SSIM"
    MSSSIM = "MSSSIM"
    GRSSIM4 = "GRSSIM4"
    NFID = "NFID"

    @classmethod
    def parse(cls, name) -> "MeasureId":
        if isinstance(name, cls):
            return name
        try:
            return cls(str(name).strip().upper())
        except ValueError:
            raise UnknownMeasure(f"unknown measure {name!r}; expected one of {[m.value for m in cls]}") from None


def parse_measures(names) -> Tuple[MeasureId, ...]:
    """Validate a list (or comma-separated string) of measure names, keeping order."""
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    out = []
    for n in names:
        m = MeasureId.parse(n)
        if m not in out:
            out.append(m)
    if not out:
        raise UnknownMeasure("no measures requested")
    return tuple(out)


@dataclass(frozen=True)
class MeasureConfig:
    hist_bins: int = 50
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 255.0
    grad_C: float = 1e-6
    msssim_scales: int = 5
    msssim_weights: Tuple[float, ...] = MSSSIM_WEIGHTS
    # smallest extent allowed at the coarsest MS-SSIM scale
    msssim_min_size: int = 6
    nfid_resample: Tuple[int, int, int] = (96, 96, 96)
    nfid_feature_dim: int = 64
    nfid_sigmas: Tuple[float, ...] = (1.0, 2.0, 4.0)
    nfid_seed: int = 0
    # jointly min-max rescale to [0, data_range] before PSNR / SSIM variants
    rescale: bool = True

    def __post_init__(self):
        positive = ("hist_bins", "ssim_window", "ssim_sigma", "k1", "k2", "data_range", "grad_C",
                    "msssim_scales", "msssim_min_size", "nfid_feature_dim")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be odd")
        w = tuple(float(x) for x in self.msssim_weights)
        if len(w) < self.msssim_scales:
            raise ValueError(f"need {self.msssim_scales} MS-SSIM weights, got {len(w)}")
        if any(x <= 0 for x in w):
            raise ValueError("MS-SSIM weights must be positive")
        object.__setattr__(self, "msssim_weights", w)
        object.__setattr__(self, "nfid_resample", tuple(int(n) for n in self.nfid_resample))
        object.__setattr__(self, "nfid_sigmas", tuple(float(s) for s in self.nfid_sigmas))

    def scale_weights(self) -> np.ndarray:
        """MS-SSIM exponents for the configured number of scales, renormalised to sum to 1.

        The published five weights sum to 1.0001, so they are renormalised
        even at the default setting.
        """
        w = np.asarray(self.msssim_weights[: self.msssim_scales], dtype=np.float64)
        return w / w.sum()

    @classmethod
    def from_mapping(cls, values: dict) -> "MeasureConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(values) - names
        if unknown:
            raise ValueError(f"unknown measure settings: {sorted(unknown)}")
        return cls(**values)


# ---------------------------------------------------------------------------
# input handling


def _array(v) -> np.ndarray:
    return np.asarray(v.data if isinstance(v, Volume) else v, dtype=np.float64)


def resolve_mask(x, y, mask=None) -> Optional[np.ndarray]:
    """Explicit mask, else the union of the volumes' own masks, else None (everything)."""
    if mask is not None:
        return np.asarray(mask, dtype=bool)
    masks = [v.mask for v in (x, y) if isinstance(v, Volume) and v.mask is not None]
    if not masks:
        return None
    return masks[0] | masks[1] if len(masks) == 2 else masks[0]


def prepare(x, y, mask=None):
    """(x, y, mask) as float64 arrays with everything outside the mask zeroed."""
    m = resolve_mask(x, y, mask)
    a, b = _array(x), _array(y)
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    if m is None:
        m = np.ones(a.shape, dtype=bool)
    elif m.shape != a.shape:
        raise ShapeMismatch(f"mask shape {m.shape} does not match volumes {a.shape}")
    if not m.any():
        raise ShapeMismatch("mask selects no voxels")
    return np.where(m, a, 0.0), np.where(m, b, 0.0), m


def joint_rescale(a: np.ndarray, b: np.ndarray, m: np.ndarray, cfg: MeasureConfig):
    """Map the pair's within-mask range jointly onto [0, L]; background stays 0."""
    if not cfg.rescale:
        return a, b
    lo = min(float(a[m].min()), float(b[m].min()))
    hi = max(float(a[m].max()), float(b[m].max()))
    scale = cfg.data_range / (hi - lo) if hi > lo else 0.0
    return np.where(m, (a - lo) * scale, 0.0), np.where(m, (b - lo) * scale, 0.0)


# ---------------------------------------------------------------------------
# histogram measures


def bin_indices(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.int64)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1)


def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def joint_histogram(vx: np.ndarray, vy: np.ndarray, bins: int) -> np.ndarray:
    """Normalised joint histogram on shared equal-width bins over the pair's range."""
    lo = min(float(vx.min()), float(vy.min()))
    hi = max(float(vx.max()), float(vy.max()))
    ix = bin_indices(vx, lo, hi, bins)
    iy = bin_indices(vy, lo, hi, bins)
    joint = np.bincount(ix * bins + iy, minlength=bins * bins).reshape(bins, bins).astype(np.float64)
    return joint / joint.sum()


def _mi_terms(joint: np.ndarray):
    px, py = joint.sum(axis=1), joint.sum(axis=0)
    hx, hy, hxy = _entropy(px), _entropy(py), _entropy(joint.ravel())
    return hx, hy, hx + hy - hxy


def mutual_information(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    """MI in nats over a ``hist_bins``-square joint histogram; 0 if either image is constant."""
    a, b, m = prepare(x, y, mask)
    hx, hy, mi = _mi_terms(joint_histogram(a[m], b[m], cfg.hist_bins))
    if hx == 0.0 or hy == 0.0:
        return 0.0
    return max(mi, 0.0)


def normalized_mutual_information(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    """MI / sqrt(H(X) H(Y)); raises DegenerateIntensities if either entropy is 0."""
    a, b, m = prepare(x, y, mask)
    hx, hy, mi = _mi_terms(joint_histogram(a[m], b[m], cfg.hist_bins))
    if hx == 0.0 or hy == 0.0:
        raise DegenerateIntensities("NMI is undefined for a constant image")
    return float(mi / math.sqrt(hx * hy))


# ---------------------------------------------------------------------------
# moment measures


def negative_mse(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    a, b, m = prepare(x, y, mask)
    d = a[m] - b[m]
    return -float(np.mean(d * d))


def psnr(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    """PSNR in dB after joint rescaling to [0, L]; ``inf`` when the MSE is 0."""
    a, b, m = prepare(x, y, mask)
    a, b = joint_rescale(a, b, m, cfg)
    d = a[m] - b[m]
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(cfg.data_range**2 / mse)


def pearson(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    a, b, m = prepare(x, y, mask)
    va, vb = a[m] - a[m].mean(), b[m] - b[m].mean()
    na, nb = math.sqrt(float(va @ va)), math.sqrt(float(vb @ vb))
    if na == 0.0 or nb == 0.0:
        raise DegenerateIntensities("PCC is undefined for a constant image")
    return float(np.clip((va @ vb) / (na * nb), -1.0, 1.0))


def cosine_similarity(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    a, b, m = prepare(x, y, mask)
    va, vb = a[m], b[m]
    na, nb = math.sqrt(float(va @ va)), math.sqrt(float(vb @ vb))
    if na == 0.0 or nb == 0.0:
        raise ZeroVector("cosine similarity is undefined for an all-zero image")
    return float(np.clip((va @ vb) / (na * nb), -1.0, 1.0))


def sobel_magnitude(a: np.ndarray) -> np.ndarray:
    """|grad| from the 3x3x3 Sobel operator along each axis (edges reflected)."""
    sq = np.zeros_like(a)
    for axis in range(a.ndim):
        g = ndimage.sobel(a, axis=axis, mode="reflect")
        sq += g * g
    return np.sqrt(sq)


def gradient_similarity_from_magnitudes(ga: np.ndarray, gb: np.ndarray, c: float) -> float:
    return float(np.mean((2.0 * ga * gb + c) / (ga * ga + gb * gb + c)))


def gradient_similarity(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    """Mean over mask voxels of (2|gX||gY| + C) / (|gX|^2 + |gY|^2 + C)."""
    a, b, m = prepare(x, y, mask)
    return gradient_similarity_from_magnitudes(sobel_magnitude(a)[m], sobel_magnitude(b)[m], cfg.grad_C)
