"""Scoring pairs of volumes: one pair at a time or every pair of a cohort.

:func:`score_all_pairs` shares per-volume work (masked values, gradient
magnitudes, Gaussian-window moments, NFID embeddings) across pairs; its
output agrees with calling :func:`score_pair` on each pair.
"""

from __future__ import annotations

import itertools
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DegenerateIntensities, ShapeMismatch, ZeroVector
from ..records import PairScore
from ..volume import Volume, mask_bbox
from .measures import (
    MeasureConfig,
    MeasureId,
    _mi_terms,
    cosine_similarity,
    gradient_similarity,
    gradient_similarity_from_magnitudes,
    joint_histogram,
    mutual_information,
    negative_mse,
    normalized_mutual_information,
    parse_measures,
    pearson,
    psnr,
    sobel_magnitude,
)
from .nfid import extract_features, negative_fid, nfid
from .structural import _smooth, gaussian_window, gr_ssim_4, ms_ssim, ssim

logger = logging.getLogger(__name__)

MEASURE_FUNCTIONS: Dict[MeasureId, Callable] = {
    MeasureId.MI: mutual_information,
    MeasureId.NMI: normalized_mutual_information,
    MeasureId.NMSE: negative_mse,
    MeasureId.PSNR: psnr,
    MeasureId.PCC: pearson,
    MeasureId.COSSIM: cosine_similarity,
    MeasureId.GRADSIM: gradient_similarity,
    MeasureId.SSIM: ssim,
    MeasureId.MSSSIM: ms_ssim,
    MeasureId.GRSSIM4: gr_ssim_4,
    MeasureId.NFID: nfid,
}


def default_workers() -> int:
    """Worker count from ``VOXLINK_WORKERS`` (default 1)."""
    raw = os.environ.get("VOXLINK_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"VOXLINK_WORKERS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("VOXLINK_WORKERS must be >= 1")
    return n


def score_pair(
    x,
    y,
    measures: Iterable = tuple(MeasureId),
    cfg: MeasureConfig = MeasureConfig(),
    mask=None,
    id_a: str = "a",
    id_b: str = "b",
) -> List[PairScore]:
    """One :class:`PairScore` per requested measure, in the requested order.

    Measure names are validated before anything is computed.
    """
    ids = parse_measures(measures)
    return [PairScore(id_a, id_b, m.value, float(MEASURE_FUNCTIONS[m](x, y, mask, cfg))) for m in ids]


# ---------------------------------------------------------------------------
# cohort scoring


def cohort_mask(volumes: Sequence[Volume]) -> np.ndarray:
    """Union of the volumes' masks (every voxel if none carries a mask)."""
    masks = [v.mask for v in volumes if v.mask is not None]
    if not masks:
        return np.ones(volumes[0].dims, dtype=bool)
    return np.logical_or.reduce(masks)


class _Cohort:
    """Per-volume quantities shared by all pairs."""

    def __init__(self, arrays: List[np.ndarray], mask: np.ndarray, cfg: MeasureConfig, measures):
        self.cfg = cfg
        self.mask = mask
        self.arrays = [np.where(mask, a, 0.0) for a in arrays]
        self.values = [a[mask] for a in self.arrays]
        self.lo = np.array([v.min() for v in self.values])
        self.hi = np.array([v.max() for v in self.values])
        if MeasureId.PCC in measures:
            self.centred = []
            for v in self.values:
                c = v - v.mean()
                n = math.sqrt(float(c @ c))
                self.centred.append(c / n if n > 0 else None)
        if MeasureId.COSSIM in measures:
            self.unit = []
            for v in self.values:
                n = math.sqrt(float(v @ v))
                self.unit.append(v / n if n > 0 else None)
        if MeasureId.GRADSIM in measures:
            self.grad = [sobel_magnitude(a)[mask] for a in self.arrays]
        if MeasureId.SSIM in measures:
            w = gaussian_window(cfg.ssim_window, cfg.ssim_sigma)
            self.window = w
            self.g_m = _smooth(mask.astype(np.float64), w, (0, 1, 2))
            self.g_x = [_smooth(a, w, (0, 1, 2)) for a in self.arrays]
            self.g_xx = [_smooth(a * a, w, (0, 1, 2)) for a in self.arrays]

    def rescale(self, i: int, j: int) -> Tuple[float, float]:
        """(lo, scale) of the pair's joint rescaling to [0, L]."""
        if not self.cfg.rescale:
            return 0.0, 1.0
        lo = float(min(self.lo[i], self.lo[j]))
        hi = float(max(self.hi[i], self.hi[j]))
        return lo, (self.cfg.data_range / (hi - lo) if hi > lo else 0.0)

    def ssim(self, i: int, j: int) -> float:
        cfg = self.cfg
        lo, s = self.rescale(i, j)
        gm, gx, gy = self.g_m, self.g_x[i], self.g_x[j]
        gxy = _smooth(self.arrays[i] * self.arrays[j], self.window, (0, 1, 2))
        # moments of s * (x - lo) inside the mask, expanded so only G(xy) is per pair
        mu_a = s * (gx - lo * gm)
        mu_b = s * (gy - lo * gm)
        ea = s * s * (self.g_xx[i] - 2.0 * lo * gx + lo * lo * gm)
        eb = s * s * (self.g_xx[j] - 2.0 * lo * gy + lo * lo * gm)
        eab = s * s * (gxy - lo * gx - lo * gy + lo * lo * gm)
        c1 = (cfg.k1 * cfg.data_range) ** 2
        c2 = (cfg.k2 * cfg.data_range) ** 2
        var_a, var_b, cov = ea - mu_a * mu_a, eb - mu_b * mu_b, eab - mu_a * mu_b
        lum = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1)
        cs = (2.0 * cov + c2) / (var_a + var_b + c2)
        return float(np.mean((lum * cs)[self.mask]))

    def score(self, m: MeasureId, i: int, j: int, embeddings) -> float:
        cfg = self.cfg
        va, vb = self.values[i], self.values[j]
        if m in (MeasureId.MI, MeasureId.NMI):
            hx, hy, mi = _mi_terms(joint_histogram(va, vb, cfg.hist_bins))
            if hx == 0.0 or hy == 0.0:
                if m is MeasureId.MI:
                    return 0.0
                raise DegenerateIntensities("NMI is undefined for a constant image")
            return max(mi, 0.0) if m is MeasureId.MI else mi / math.sqrt(hx * hy)
        if m is MeasureId.NMSE:
            d = va - vb
            return -float(np.mean(d * d))
        if m is MeasureId.PSNR:
            lo, s = self.rescale(i, j)
            d = (va - lo) * s - (vb - lo) * s
            mse = float(np.mean(d * d))
            return math.inf if mse == 0.0 else 10.0 * math.log10(cfg.data_range**2 / mse)
        if m is MeasureId.PCC:
            if self.centred[i] is None or self.centred[j] is None:
                raise DegenerateIntensities("PCC is undefined for a constant image")
            return float(np.clip(self.centred[i] @ self.centred[j], -1.0, 1.0))
        if m is MeasureId.COSSIM:
            if self.unit[i] is None or self.unit[j] is None:
                raise ZeroVector("cosine similarity is undefined for an all-zero image")
            return float(np.clip(self.unit[i] @ self.unit[j], -1.0, 1.0))
        if m is MeasureId.GRADSIM:
            return gradient_similarity_from_magnitudes(self.grad[i], self.grad[j], cfg.grad_C)
        if m is MeasureId.SSIM:
            return self.ssim(i, j)
        if m is MeasureId.NFID:
            return negative_fid(embeddings[i], embeddings[j])
        # MS-SSIM and GR-SSIM4 have no shared per-volume work worth caching
        return float(MEASURE_FUNCTIONS[m](self.arrays[i], self.arrays[j], self.mask, cfg))


def score_all_pairs(
    volumes: Sequence,
    ids: Sequence[str],
    measures: Iterable = (MeasureId.SSIM, MeasureId.NMI, MeasureId.PCC, MeasureId.GRADSIM),
    cfg: MeasureConfig = MeasureConfig(),
    mask: Optional[np.ndarray] = None,
    crop: bool = True,
    workers: Optional[int] = None,
) -> List[PairScore]:
    """Score every unordered pair of ``volumes`` under each measure.

    All pairs share one mask: ``mask`` if given, else the union of the
    volumes' own masks.  With ``crop`` the volumes are first cut to that
    mask's bounding box.  Pairs are spread over ``workers`` threads (default
    from ``VOXLINK_WORKERS``); the result does not depend on the schedule.
    Records come out grouped by measure, pairs in (i, j) order.
    """
    measures = parse_measures(measures)
    if len(volumes) != len(ids):
        raise ValueError("volumes and ids differ in length")
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be unique")
    if len(volumes) < 2:
        return []
    vols = [v if isinstance(v, Volume) else Volume(np.asarray(v, dtype=np.float64)) for v in volumes]
    dims = vols[0].dims
    for v in vols[1:]:
        if v.dims != dims:
            raise ShapeMismatch(f"volumes differ in shape: {dims} vs {v.dims}")
    m = np.asarray(mask, dtype=bool) if mask is not None else cohort_mask(vols)
    if m.shape != dims:
        raise ShapeMismatch(f"mask shape {m.shape} does not match volumes {dims}")
    if not m.any():
        raise ShapeMismatch("mask selects no voxels")
    arrays = [np.asarray(v.data, dtype=np.float64) for v in vols]
    embeddings = None
    if MeasureId.NFID in measures:
        # NFID resamples the full field of view, so it sees the uncropped volumes
        embeddings = [extract_features(v.replace(mask=m), cfg) for v in vols]
    if crop:
        box = mask_bbox(m)
        arrays = [a[box] for a in arrays]
        m = m[box]
    cohort = _Cohort(arrays, m, cfg, measures)
    pairs = list(itertools.combinations(range(len(vols)), 2))
    logger.info("scoring %d pairs x %d measures", len(pairs), len(measures))

    def run(pair):
        i, j = pair
        return [cohort.score(meas, i, j, embeddings) for meas in measures]

    n_workers = default_workers() if workers is None else int(workers)
    if n_workers < 1:
        raise ValueError("workers must be >= 1")
    if n_workers == 1:
        rows = [run(p) for p in pairs]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            rows = list(pool.map(run, pairs))
    return [
        PairScore(ids[i], ids[j], meas.value, float(rows[k][c]))
        for c, meas in enumerate(measures)
        for k, (i, j) in enumerate(pairs)
    ]
