"""Intensity harmonization: z-scoring, bias-field removal, histogram matching
and skull stripping.  All steps operate on the brain mask only and leave the
background at zero."""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np
from scipy import ndimage

from .._poly import basis_at, normalized_axes
from ..errors import DegenerateIntensities, EmptyMask, EmptyMaskDerived, MissingMask
from ..linkage.thresholds import otsu_cut
from ..volume import Volume

logger = logging.getLogger(__name__)


def _require_mask(v: Volume, what: str) -> np.ndarray:
    if v.mask is None:
        raise MissingMask(f"{what} needs a brain mask")
    if not v.mask.any():
        raise EmptyMask(f"{what}: brain mask is empty")
    return v.mask


def zscore_normalize(v: Volume) -> Volume:
    """Zero mean, unit population variance within the mask; background set to 0."""
    mask = _require_mask(v, "zscore_normalize")
    vals = v.data[mask].astype(np.float64)
    sd = float(vals.std())
    if sd == 0.0:
        raise DegenerateIntensities("intensities are constant within the mask")
    out = np.zeros(v.dims, dtype=np.float64)
    out[mask] = (vals - vals.mean()) / sd
    return v.replace(data=out)


# ---------------------------------------------------------------------------
# bias field


def _kmeans_1d(x: np.ndarray, k: int, iters: int = 20) -> np.ndarray:
    """Class means of a 1-D k-means started at evenly spaced quantiles."""
    centers = np.quantile(x, (np.arange(k) + 0.5) / k)
    for _ in range(iters):
        edges = 0.5 * (centers[1:] + centers[:-1])
        lab = np.searchsorted(edges, x)
        new = np.array([x[lab == c].mean() if np.any(lab == c) else centers[c] for c in range(k)])
        if np.allclose(new, centers, rtol=0, atol=1e-9):
            break
        centers = np.sort(new)
    return centers


def bias_correct(
    v: Volume,
    poly_degree: int = 3,
    iters: int = 20,
    n_classes: int = 3,
    tol: float = 1e-4,
    shift_fraction: float = 0.05,
    return_field: bool = False,
):
    """Remove a smooth multiplicative bias field.

    The log-intensities inside the mask are modelled as a piecewise-constant
    tissue image plus a polynomial of ``poly_degree`` in the normalised grid
    coordinates.  The two parts are estimated alternately until the field
    changes by less than ``tol``: 1-D k-means on the corrected intensities
    gives the tissue levels, then weighted least squares (weight = level
    squared) gives the polynomial.  The field has zero mean over the mask, so the
    overall intensity level is preserved.

    Inputs with non-positive values (e.g. z-scored data) are shifted so the
    minimum sits at ``shift_fraction`` of the range before taking logs, and
    shifted back afterwards.  Voxels on the mask boundary are left out of the
    fit because partial voluming with the background drags them far below
    every tissue class.
    """
    mask = _require_mask(v, "bias_correct")
    vals = v.data[mask].astype(np.float64)
    lo, hi = float(vals.min()), float(vals.max())
    if hi == lo:
        raise DegenerateIntensities("intensities are constant within the mask")
    shift = 0.0 if lo > 0 else -lo + shift_fraction * (hi - lo)
    logv = np.log(vals + shift)

    ax = normalized_axes(v.dims)
    idx = np.nonzero(mask)
    coords = np.stack([ax[0][idx[0]], ax[1][idx[1]], ax[2][idx[2]]], axis=1)
    design = basis_at(coords, poly_degree, include_constant=False)
    design -= design.mean(axis=0)
    interior = ndimage.binary_erosion(mask)[mask]
    if interior.sum() <= design.shape[1]:
        interior = np.ones_like(interior)
    d_in = design[interior]
    log_in = logv[interior]

    field = np.zeros_like(logv)
    for it in range(iters):
        # tissue classes live in the linear domain, where they are evenly spread
        corrected = np.exp(log_in - field[interior])
        centers = _kmeans_1d(corrected, n_classes)
        edges = 0.5 * (centers[1:] + centers[:-1])
        level = centers[np.searchsorted(edges, corrected)]
        # weight by level^2: a log residual on a dark class is a small linear one
        w = level * level
        lhs = d_in.T @ (d_in * w[:, None])
        rhs = d_in.T @ (w * (log_in - np.log(level)))
        coef = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
        new_field = design @ coef
        new_field -= new_field.mean()
        change = float(np.max(np.abs(new_field - field)))
        field = new_field
        if change < tol:
            break
    logger.debug("bias_correct: %d iterations, last change %.3g", it + 1, change)

    out = np.zeros(v.dims, dtype=np.float64)
    out[mask] = np.exp(logv - field) - shift
    result = v.replace(data=out)
    if return_field:
        full = np.zeros(v.dims, dtype=np.float64)
        full[mask] = field
        return result, full
    return result


# ---------------------------------------------------------------------------
# histogram matching


def histogram_match(v: Volume, reference: Volume, landmarks: int = 256) -> Volume:
    """Piecewise-linear quantile mapping of ``v``'s brain onto ``reference``'s.

    Source and reference are summarised by ``landmarks`` evenly spaced
    quantiles.  Repeated source landmarks (flat stretches of the CDF) are
    merged and mapped to the mean of their reference landmarks so the mapping
    stays a function.
    """
    mask = _require_mask(v, "histogram_match")
    rmask = _require_mask(reference, "histogram_match reference")
    src = v.data[mask].astype(np.float64)
    ref = reference.data[rmask].astype(np.float64)
    q = np.linspace(0.0, 1.0, landmarks)
    sq = np.quantile(src, q)
    rq = np.quantile(ref, q)
    xs, inverse = np.unique(sq, return_inverse=True)
    ys = np.bincount(inverse, weights=rq) / np.bincount(inverse)
    out = np.zeros(v.dims, dtype=np.float64)
    if len(xs) == 1:
        out[mask] = ys[0]
    else:
        out[mask] = np.interp(src, xs, ys)
    return v.replace(data=out)


# ---------------------------------------------------------------------------
# skull stripping


def lowest_multi_otsu_cut(values, classes: int = 3, bins: int = 128) -> Optional[float]:
    """Lowest of the ``classes - 1`` cuts that maximise the between-class variance.

    Exhaustive over cut pairs (three classes) on a ``bins``-bin histogram;
    ``None`` for constant input.  Values ``>= cut`` lie above the lowest cut.
    """
    if classes == 2:
        return otsu_cut(values, bins)
    if classes != 3:
        raise ValueError("classes must be 2 or 3")
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0 or not float(v.max()) > float(v.min()):
        return None
    edges = np.linspace(v.min(), v.max(), bins + 1)
    idx = np.clip(np.searchsorted(edges, v, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    centers = 0.5 * (edges[:-1] + edges[1:])
    # cumulative weight and first moment, with a leading zero
    w = np.concatenate([[0.0], np.cumsum(counts)])
    m = np.concatenate([[0.0], np.cumsum(counts * centers)])
    a = np.arange(1, bins)[:, None]  # first class: bins [0, a)
    b = np.arange(1, bins)[None, :]  # second class: bins [a, b)
    parts = [(w[a], m[a]), (w[b] - w[a], m[b] - m[a]), (w[-1] - w[b], m[-1] - m[b])]
    with np.errstate(invalid="ignore", divide="ignore"):
        score = sum(mk * mk / wk for wk, mk in parts)
    valid = (b > a) & (parts[0][0] > 0) & (parts[1][0] > 0) & (parts[2][0] > 0)
    score = np.where(valid, score, -np.inf)
    if not np.isfinite(score).any():
        return otsu_cut(v, bins)
    i, _ = np.unravel_index(int(np.argmax(score)), score.shape)
    return float(edges[i + 1])


def derive_brain_mask(v: Volume, closing_radius: int = 1) -> np.ndarray:
    """Lowest three-class Otsu cut, largest 6-connected component, then closing.

    Three classes keep the darkest tissue on the foreground side: a two-class
    split of brain plus background tends to fall between the two darker tissues.
    """
    cut = lowest_multi_otsu_cut(v.data)
    if cut is None:
        raise EmptyMaskDerived("volume is constant; no foreground to derive a mask from")
    fg = v.data >= cut
    structure = ndimage.generate_binary_structure(3, 1)
    labels, n = ndimage.label(fg, structure=structure)
    if n == 0:
        raise EmptyMaskDerived("Otsu foreground is empty")
    sizes = np.bincount(labels.ravel())[1:]
    brain = labels == (int(np.argmax(sizes)) + 1)
    if closing_radius > 0:
        ball = ndimage.iterate_structure(structure, closing_radius)
        brain = ndimage.binary_closing(brain, structure=ball) | brain
    if not brain.any():
        raise EmptyMaskDerived("derived mask is empty")
    return brain


def skull_strip(v: Volume, mask: Optional[np.ndarray] = None) -> Volume:
    """Zero everything outside the brain.

    Uses ``mask`` if given, else ``v.mask``, else derives one with
    :func:`derive_brain_mask`.  The returned volume carries the mask used.
    """
    if mask is None:
        mask = v.mask
    if mask is None:
        mask = derive_brain_mask(v)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != v.dims:
        raise ValueError(f"mask shape {mask.shape} does not match volume {v.dims}")
    return v.replace(data=np.where(mask, v.data, 0.0), mask=mask)
