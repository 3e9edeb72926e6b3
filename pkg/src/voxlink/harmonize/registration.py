"""Multi-resolution affine registration by derivative-free coordinate descent.

The search runs over the 12 affine parameters about the fixed image's centre
of mass.  Rotation, log-scale and shear are rescaled by the brain radius so
that one unit in every coordinate moves the brain boundary by about 1 mm;
that makes a single step schedule meaningful for all parameters.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage, stats

from ..errors import DidNotImprove, NoOverlap
from ..volume import AffineTransform, Volume, resample, sample

logger = logging.getLogger(__name__)

COSTS = ("nmi", "msd")
INITIALIZERS = ("center_of_mass", "identity")
NO_SHEAR = np.array([True] * 9 + [False] * 3)


@dataclass(frozen=True)
class RegistrationConfig:
    levels: int = 3
    cost: str = "nmi"
    max_iters_per_level: int = 200
    param_tolerance: float = 1e-4
    histogram_bins: int = 50
    initializer: str = "center_of_mass"
    # sampling of fixed voxels per level; not a tuning knob for accuracy
    max_samples: int = 20000
    seed: int = 0
    # levels (finest = 0) at which shear is searched; coarser levels fit
    # rotation, translation and per-axis scale only
    shear_levels: int = 1
    # extra starts at the coarsest level, rotated +/- this many degrees
    # about each axis (0 disables); guards against rotational local optima
    rotation_starts_deg: float = 20.0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.histogram_bins < 8:
            raise ValueError("histogram_bins must be >= 8")
        if self.cost not in COSTS:
            raise ValueError(f"cost must be one of {COSTS}")
        if self.initializer not in INITIALIZERS:
            raise ValueError(f"initializer must be one of {INITIALIZERS}")
        if self.max_iters_per_level < 1 or self.param_tolerance <= 0:
            raise ValueError("max_iters_per_level and param_tolerance must be positive")
        if self.rotation_starts_deg < 0:
            raise ValueError("rotation_starts_deg must be >= 0")

    @classmethod
    def from_mapping(cls, values: dict) -> "RegistrationConfig":
        known = {k: values[k] for k in cls.__dataclass_fields__ if k in values}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown registration settings: {sorted(unknown)}")
        return cls(**known)


def _support(v: Volume) -> np.ndarray:
    return v.mask if v.mask is not None else v.data != 0


def center_of_mass(v: Volume) -> np.ndarray:
    """Physical centre of the brain support (unweighted)."""
    idx = np.argwhere(_support(v))
    if idx.size == 0:
        raise NoOverlap("volume has empty support")
    return np.asarray(v.origin) + np.asarray(v.spacing) * idx.mean(axis=0)


def _nmi_from_joint(joint: np.ndarray, bins: int) -> float:
    """(H(X) + H(Y) - H(X, Y)) / sqrt(H(X) H(Y)) of a (weighted) joint histogram."""
    joint = joint / joint.sum()
    px = joint.reshape(bins, bins).sum(axis=1)
    py = joint.reshape(bins, bins).sum(axis=0)
    hx = -np.sum(px[px > 0] * np.log(px[px > 0]))
    hy = -np.sum(py[py > 0] * np.log(py[py > 0]))
    if hx <= 0 or hy <= 0:
        return 0.0
    nz = joint[joint > 0]
    hxy = -np.sum(nz * np.log(nz))
    return float((hx + hy - hxy) / math.sqrt(hx * hy))


def _rank_image(data: np.ndarray, support: np.ndarray) -> np.ndarray:
    """Within-support quantile rank in (0, 1]; background 0.

    Ranks are unchanged by any strictly increasing intensity change.
    """
    out = np.zeros(data.shape, dtype=np.float64)
    vals = data[support]
    if vals.size:
        out[support] = stats.rankdata(vals, method="average") / vals.size
    return out


def _level_ranks(v: Volume, factor: int) -> np.ndarray:
    """Rank image, smoothed for pyramid level ``factor``.

    Smoothing the ranks rather than the intensities keeps every pyramid
    level invariant to monotone intensity changes.
    """
    r = _rank_image(v.data.astype(np.float64), _support(v))
    if factor > 1:
        ref = min(v.spacing)
        r = ndimage.gaussian_filter(r, [0.5 * factor * ref / s for s in v.spacing], mode="constant")
    return r


def _to_bins(r: np.ndarray, bins: int) -> np.ndarray:
    """Bin 0 for background (rank 0); ranks in (0, 1] split evenly over 1..bins-1."""
    return np.clip(np.ceil(r * (bins - 1)), 0, bins - 1).astype(np.int64)


class _LevelCost:
    """Cost of a candidate transform evaluated on one pyramid level.

    NMI uses rank-binned intensities and partial-volume interpolation of the
    joint histogram: each sample spreads its trilinear weights over the bins
    of the 8 surrounding moving voxels.  That keeps the cost smooth in the
    parameters and invariant to monotone intensity changes of either image.
    """

    def __init__(self, moving: Volume, fixed: Volume, factor: int, cfg: RegistrationConfig):
        self.cfg = cfg
        ref = min(fixed.spacing)
        if factor > 1:
            sig_f = [0.5 * factor * ref / s for s in fixed.spacing]
            sig_m = [0.5 * factor * ref / s for s in moving.spacing]
            fdata = ndimage.gaussian_filter(fixed.data.astype(np.float64), sig_f, mode="constant")
            mdata = ndimage.gaussian_filter(moving.data.astype(np.float64), sig_m, mode="constant")
        else:
            fdata = fixed.data.astype(np.float64)
            mdata = moving.data.astype(np.float64)
        self.moving = moving
        self.mdata = mdata

        # sample the whole fixed grid: background has to match background,
        # otherwise NMI rewards shrinking the moving brain into the CSF shell
        idx = np.argwhere(np.ones(fixed.dims, dtype=bool)[::factor, ::factor, ::factor]) * factor
        rng = np.random.default_rng((cfg.seed, factor))
        if len(idx) > cfg.max_samples:
            idx = idx[np.sort(rng.choice(len(idx), cfg.max_samples, replace=False))]
        # random sub-cell offsets: samples on the voxel lattice make the
        # interpolated cost peak at grid-aligned transforms
        jitter = rng.uniform(-0.5, 0.5, idx.shape) * factor
        cont = idx + (jitter if factor > 1 else 0.0)
        cont = np.clip(cont, 0.0, np.asarray(fixed.dims, dtype=np.float64) - 1.0)
        self.points = np.asarray(fixed.origin) + np.asarray(fixed.spacing) * cont
        self.fvals = ndimage.map_coordinates(fdata, cont.T, order=1, mode="nearest", prefilter=False)
        if cfg.cost == "nmi":
            bins = cfg.histogram_bins
            franks = ndimage.map_coordinates(_level_ranks(fixed, factor), cont.T, order=1, mode="nearest", prefilter=False)
            self.f_offset = _to_bins(franks, bins) * bins
            # pad with background so out-of-grid corners read bin 0
            self.mbins = np.pad(_to_bins(_level_ranks(moving, factor), bins), 1).ravel()
            shape = np.array([n + 2 for n in moving.dims])
            self.m_origin = np.asarray(moving.origin)
            self.m_inv_spacing = 1.0 / np.asarray(moving.spacing)
            self.m_upper = (shape - 2).astype(np.float64) + 0.999999
            self.m_strides = np.array([shape[1] * shape[2], shape[2], 1])
            self.m_corners = np.array(
                [dx * self.m_strides[0] + dy * self.m_strides[1] + dz for dx in (0, 1) for dy in (0, 1) for dz in (0, 1)]
            )

    def _pv_nmi(self, src: np.ndarray) -> float:
        bins = self.cfg.histogram_bins
        ijk = (src - self.m_origin) * self.m_inv_spacing + 1.0
        np.clip(ijk, 0.0, self.m_upper, out=ijk)
        base = ijk.astype(np.int64)
        frac = ijk - base
        flat = base @ self.m_strides
        gx = (1.0 - frac[:, 0], frac[:, 0])
        gy = (1.0 - frac[:, 1], frac[:, 1])
        gz = (1.0 - frac[:, 2], frac[:, 2])
        joint = np.zeros(bins * bins)
        corner = iter(self.m_corners)
        for dx in (0, 1):
            for dy in (0, 1):
                wxy = gx[dx] * gy[dy]
                for dz in (0, 1):
                    mb = self.mbins[flat + next(corner)]
                    joint += np.bincount(self.f_offset + mb, weights=wxy * gz[dz], minlength=bins * bins)
        return _nmi_from_joint(joint, bins)

    def __call__(self, t: AffineTransform) -> float:
        inv = np.linalg.inv(t.matrix)
        src = self.points @ inv[:3, :3].T + inv[:3, 3]
        if self.cfg.cost == "msd":
            mvals = sample(self.moving, src, order=1, data=self.mdata)
            return -float(np.mean((self.fvals - mvals) ** 2))
        return self._pv_nmi(src)

    def overlap(self, t: AffineTransform) -> int:
        inv = np.linalg.inv(t.matrix)
        src = self.points @ inv[:3, :3].T + inv[:3, 3]
        inside = sample(self.moving, src, order=0, data=_support(self.moving).astype(np.float64))
        return int(np.count_nonzero(inside))


def register_affine(
    moving: Volume,
    fixed: Volume,
    cfg: RegistrationConfig = RegistrationConfig(),
    trace: Optional[List[dict]] = None,
) -> Tuple[AffineTransform, Volume]:
    """Affinely align ``moving`` to ``fixed``.

    Returns the transform (moving -> fixed coordinates) and ``moving``
    resampled onto fixed's grid.  If ``trace`` is a list, one dict per
    pyramid level is appended with the accepted cost sequence.
    """
    if not _support(fixed).any() or not _support(moving).any():
        raise NoOverlap("fixed or moving volume has empty support")
    center = center_of_mass(fixed)
    if cfg.initializer == "center_of_mass":
        start = AffineTransform.translation(center - center_of_mass(moving))
    else:
        start = AffineTransform.identity()

    pts = np.argwhere(_support(fixed)) * np.asarray(fixed.spacing) + np.asarray(fixed.origin)
    radius = float(np.sqrt(np.mean(np.sum((pts - center) ** 2, axis=1))))
    scales = np.array([1.0] * 3 + [1.0 / radius] * 9)

    def to_transform(u):
        return AffineTransform.from_parameters(u * scales, center) @ start

    u = np.zeros(12)
    finest: Optional[_LevelCost] = None
    for level in reversed(range(cfg.levels)):
        factor = 2**level
        cost = _LevelCost(moving, fixed, factor, cfg)
        if level == cfg.levels - 1 and cost.overlap(to_transform(u)) == 0:
            raise NoOverlap("moving and fixed supports do not overlap after initialization")
        ref = min(fixed.spacing)
        step0 = factor * ref
        tol = cfg.param_tolerance * radius if level == 0 else 0.1 * factor * ref
        history: List[float] = []
        starts = [u]
        if level == cfg.levels - 1 and cfg.rotation_starts_deg > 0:
            starts = _rotation_starts(u, math.radians(cfg.rotation_starts_deg) * radius)
        # rotation, translation and per-axis scale together: fitting rotation
        # alone first lets it absorb anisotropic size differences
        u, history = max(
            (_coordinate_descent(cost, to_transform, s, step0, tol, cfg.max_iters_per_level, NO_SHEAR)
             for s in starts),
            key=lambda run: run[1][-1],
        )
        if level < cfg.shear_levels:
            u, h = _coordinate_descent(cost, to_transform, u, step0, tol, cfg.max_iters_per_level)
            history.extend(h[1:])
        if trace is not None:
            trace.append({"level": level, "factor": factor, "costs": history})
        if level == 0:
            finest = cost

    initial = finest(to_transform(np.zeros(12)))
    final = finest(to_transform(u))
    if final < initial:
        warnings.warn(
            f"registration ended below its initial cost ({final:.6g} < {initial:.6g}); returning initializer",
            DidNotImprove,
            stacklevel=2,
        )
        u = np.zeros(12)
    t = AffineTransform.from_matrix(to_transform(u).matrix, center)
    if trace is not None:
        trace.append({"initial_cost": initial, "final_cost": max(final, initial)})
    out = resample(moving, t, fixed.dims, fixed.spacing, "trilinear", fixed.origin)
    return t, out


def _rotation_starts(u: np.ndarray, offset: float) -> List[np.ndarray]:
    """``u`` itself, then ``u`` rotated by +/- ``offset`` (search units) about each axis."""
    starts = [u.copy()]
    for axis in range(3):
        for sign in (1.0, -1.0):
            s = u.copy()
            s[3 + axis] += sign * offset
            starts.append(s)
    return starts


def _coordinate_descent(cost, to_transform, u, step0, tol, max_iters, active=None):
    """Accept-only +/- probing per parameter, halving a parameter's step when both fail."""
    u = u.copy()
    current = cost(to_transform(u))
    history = [current]
    steps = np.full(u.size, float(step0))
    if active is not None:
        steps[~np.asarray(active)] = 0.0
    for _ in range(max_iters):
        if np.all(steps < tol):
            break
        for i in range(u.size):
            if steps[i] < tol:
                continue
            for sign in (1.0, -1.0):
                trial = u.copy()
                trial[i] += sign * steps[i]
                value = cost(to_transform(trial))
                if value > current:
                    u, current = trial, value
                    history.append(current)
                    break
            else:
                steps[i] *= 0.5
    return u, history


def transform_error(estimated: AffineTransform, truth: AffineTransform, center) -> Tuple[float, float]:
    """Residual of ``estimated @ truth`` versus identity.

    Returns (translation error in mm at ``center``, rotation error in degrees
    of the orthogonal polar factor).
    """
    e = (estimated @ truth).matrix
    c = np.asarray(center, dtype=np.float64)
    disp = float(np.linalg.norm(e[:3, :3] @ c + e[:3, 3] - c))
    u, _, vt = np.linalg.svd(e[:3, :3])
    rot = u @ vt
    cos = np.clip((np.trace(rot) - 1.0) / 2.0, -1.0, 1.0)
    return disp, math.degrees(math.acos(cos))
