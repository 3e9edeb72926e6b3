"""Random small volume pairs and the oracle comparison shared by the measure
tests and the acceptance suite."""

from __future__ import annotations

import numpy as np

import oracles
from voxlink.simmetrics import MEASURE_FUNCTIONS, MeasureConfig, MeasureId

WINDOWED = {MeasureId.SSIM, MeasureId.MSSSIM, MeasureId.GRSSIM4}
TOLERANCE = {m: (1e-5 if m in WINDOWED else 1e-7) for m in MeasureId}


def random_case(seed: int):
    """(x, y, mask, cfg, msssim_scales) for a correlated pair of at most 8^3 voxels.

    Values are float32-representable because volumes store float32.  Half
    the cases are exactly 8^3 so MS-SSIM runs two scales; the rest use one.
    The mask is random, or absent for every fifth case.
    """
    rng = np.random.default_rng(seed)
    dims = (8, 8, 8) if seed % 2 == 0 else tuple(int(n) for n in rng.integers(3, 9, 3))
    x = rng.gamma(2.0, 50.0, dims)
    y = 0.7 * x + rng.normal(0.0, 30.0, dims)
    x, y = (a.astype(np.float32).astype(np.float64) for a in (x, y))
    mask = None if seed % 5 == 0 else rng.random(dims) < 0.7
    if mask is not None:
        mask[0, 0, 0] = mask[-1, -1, -1] = True
    scales = 2 if min(dims) >= 8 else 1
    cfg = MeasureConfig(
        msssim_scales=scales,
        msssim_min_size=min(dims) // 2 ** (scales - 1),
        nfid_resample=dims,
    )
    return x, y, mask, cfg, scales


def oracle_values(x, y, mask, scales):
    return {
        MeasureId.MI: oracles.mutual_information(x, y, mask),
        MeasureId.NMI: oracles.normalized_mutual_information(x, y, mask),
        MeasureId.NMSE: oracles.negative_mse(x, y, mask),
        MeasureId.PSNR: oracles.psnr(x, y, mask),
        MeasureId.PCC: oracles.pearson(x, y, mask),
        MeasureId.COSSIM: oracles.cosine_similarity(x, y, mask),
        MeasureId.GRADSIM: oracles.gradient_similarity(x, y, mask),
        MeasureId.SSIM: oracles.ssim(x, y, mask),
        MeasureId.MSSSIM: oracles.ms_ssim(x, y, mask, scales=scales),
        MeasureId.GRSSIM4: oracles.gr_ssim_4(x, y, mask),
        MeasureId.NFID: oracles.nfid(x, y, mask),
    }


def oracle_errors(seed: int):
    """Absolute difference from the oracle for every measure on case ``seed``."""
    x, y, mask, cfg, scales = random_case(seed)
    expected = oracle_values(x, y, mask, scales)
    return {m: abs(MEASURE_FUNCTIONS[m](x, y, mask, cfg) - expected[m]) for m in MeasureId}


def self_maximum(m: MeasureId, x) -> float:
    """The value m(x, x) must take for a non-degenerate x."""
    if m is MeasureId.MI:
        return oracles.mutual_information(x, x)  # the marginal entropy
    if m is MeasureId.PSNR:
        return float("inf")
    if m in (MeasureId.NMSE, MeasureId.NFID):
        return 0.0
    return 1.0
