"""Windowed structural similarity: SSIM, MS-SSIM and the 4-direction gradient SSIM.

Local statistics use a separable Gaussian window (size ``ssim_window``,
width ``ssim_sigma``) with reflected edges, so a constant image has constant
local statistics everywhere.  Inputs are jointly rescaled to [0, L] first.
"""

from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np
from scipy import ndimage

from ..errors import TooSmallForScales
from .measures import MeasureConfig, joint_rescale, prepare

# 2-D directional derivative kernels (rows: first in-plane axis), 0/45/90/135 degrees
DIRECTIONAL_KERNELS = (
    np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]]),
    np.array([[0.0, 1.0, 2.0], [-1.0, 0.0, 1.0], [-2.0, -1.0, 0.0]]),
    np.array([[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]]),
    np.array([[-2.0, -1.0, 0.0], [-1.0, 0.0, 1.0], [0.0, 1.0, 2.0]]),
)


def gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    w = np.exp(-(r * r) / (2.0 * sigma * sigma))
    return w / w.sum()


def _smooth(a: np.ndarray, w: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    for axis in axes:
        a = ndimage.correlate1d(a, w, axis=axis, mode="reflect")
    return a


def ssim_components(a: np.ndarray, b: np.ndarray, cfg: MeasureConfig, axes: Sequence[int] = (0, 1, 2)):
    """Per-voxel luminance term and contrast-structure term.

    Returns ``(l, cs)`` with SSIM = l * cs.
    """
    w = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2
    mu_a, mu_b = _smooth(a, w, axes), _smooth(b, w, axes)
    var_a = _smooth(a * a, w, axes) - mu_a * mu_a
    var_b = _smooth(b * b, w, axes) - mu_b * mu_b
    cov = _smooth(a * b, w, axes) - mu_a * mu_b
    lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
    cs = (2.0 * cov + c2) / (var_a + var_b + c2)
    return lum, cs


def ssim(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    """Mean over mask voxels of the 3-D Gaussian-window SSIM map."""
    a, b, m = prepare(x, y, mask)
    a, b = joint_rescale(a, b, m, cfg)
    lum, cs = ssim_components(a, b, cfg)
    return float(np.mean((lum * cs)[m]))


def _pool2(a: np.ndarray) -> np.ndarray:
    """2x2x2 average pooling; a trailing odd slice is dropped."""
    n = [s // 2 for s in a.shape]
    a = a[: 2 * n[0], : 2 * n[1], : 2 * n[2]]
    return a.reshape(n[0], 2, n[1], 2, n[2], 2).mean(axis=(1, 3, 5))


def msssim_min_dim(cfg: MeasureConfig) -> int:
    return (2 ** (cfg.msssim_scales - 1)) * cfg.msssim_min_size


def ms_ssim(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    """Multi-scale SSIM with the luminance term at the coarsest scale only.

    Scale j contributes its mean contrast-structure term raised to the j-th
    weight; the coarsest scale contributes mean SSIM.  Negative means are
    clamped to 0 before exponentiation.  The mask is pooled with the images
    and a coarse voxel counts when at least half of its children were inside.
    """
    a, b, m = prepare(x, y, mask)
    need = msssim_min_dim(cfg)
    if min(a.shape) < need:
        raise TooSmallForScales(
            f"{cfg.msssim_scales} scales need every dimension >= {need}, got {a.shape}"
        )
    a, b = joint_rescale(a, b, m, cfg)
    weights = cfg.scale_weights()
    fm = m.astype(np.float64)
    result = 1.0
    for j, wj in enumerate(weights):
        lum, cs = ssim_components(a, b, cfg)
        sel = fm >= 0.5
        if j == len(weights) - 1:
            value = float(np.mean((lum * cs)[sel]))
        else:
            value = float(np.mean(cs[sel]))
            a, b, fm = _pool2(a), _pool2(b), _pool2(fm)
        result *= max(value, 0.0) ** wj
    return float(result)


def directional_gradients(a: np.ndarray) -> Tuple[np.ndarray, ...]:
    """In-plane responses of each axial slice (fixed last index) to the 4 kernels."""
    return tuple(ndimage.correlate(a, k[:, :, None], mode="reflect") for k in DIRECTIONAL_KERNELS)


def gr_ssim_4(x, y, mask=None, cfg: MeasureConfig = MeasureConfig()) -> float:
    """4-direction gradient SSIM computed slice by slice in the axial plane.

    Each axial slice is filtered with the 0/45/90/135 degree kernels, an
    in-plane Gaussian-window SSIM map is computed for every direction, the
    four maps are averaged and the result is averaged over mask voxels.
    """
    a, b, m = prepare(x, y, mask)
    a, b = joint_rescale(a, b, m, cfg)
    total = np.zeros(a.shape)
    for ga, gb in zip(directional_gradients(a), directional_gradients(b)):
        lum, cs = ssim_components(ga, gb, cfg, axes=(0, 1))
        total += lum * cs
    return float(np.mean(total[m]) / len(DIRECTIONAL_KERNELS))
