"""Synthetic brain-like phantoms and the four simulated acquisition variants.

Each subject is a three-shell ellipsoid (CSF / gray / white, plus two
ventricles) warped by a smooth per-subject displacement field, with
subject-specific boundary undulation and a multiplicative texture.  These
give every phantom an identity that survives affine registration.

Variants follow the simulated-cohort recipe: an affine-jittered copy, an
intensity-shifted copy, a gamma-contrast copy and a polynomial bias-field
copy of each original.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

from . import _poly
from .errors import MissingMask
from .io import Manifest, ManifestEntry, save_volume
from .volume import AffineTransform, Volume, resample

logger = logging.getLogger(__name__)

TEMPLATE_SEED = 152
# seeds the gross anatomy (cortical folding pattern) shared by all phantoms
ANATOMY_SEED = 20240
VARIANT_KINDS = ("affine_jitter", "intensity_shift", "gamma_contrast", "bias_field")

# artifact defaults for ranges the simulation recipe leaves open
JITTER_ROTATION_DEG = 15.0
JITTER_TRANSLATION_MM = 10.0
JITTER_SCALE = (0.9, 1.1)
SHIFT_FRACTION = 0.1
GAMMA_RANGE = (0.1, 0.9)
BIAS_LOW_RANGE = (0.1, 0.2)
BIAS_HIGH_RANGE = (0.1, 0.8)
BIAS_DEGREE = 3


@dataclass(frozen=True)
class PhantomSpec:
    subject_seed: int
    dims: Tuple[int, int, int] = (64, 64, 64)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    tissue_means: Tuple[float, float, float] = (300.0, 650.0, 1000.0)
    axes_mm: Tuple[float, float, float] = (18.0, 24.0, 15.0)
    axis_jitter: float = 0.03
    warp_amplitude: float = 2.5
    boundary_amplitude: float = 0.06
    texture_amplitude: float = 0.06
    texture_sigma: float = 1.2
    fold_amplitude: float = 0.07
    # relative jitter of ventricle size/position and fissure width
    structure_jitter: float = 0.15

    def __post_init__(self):
        means = self.tissue_means
        if not (means[0] < means[1] < means[2]):
            raise ValueError(f"tissue_means must be strictly increasing, got {means}")
        if min(self.dims) < 32:
            raise ValueError(f"phantom dims must be >= 32 per axis, got {self.dims}")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")
        if not 0 <= self.subject_seed < 2**64:
            raise ValueError("subject_seed must be a 64-bit unsigned integer")


@dataclass(frozen=True)
class PhantomFields:
    """Intermediate fields of a phantom, exposed for inspection and tests."""

    radius: np.ndarray  # normalised warped ellipsoid radius; mask is radius < 1
    labels: np.ndarray  # 0 background, 1 CSF, 2 gray, 3 white


def _smooth_noise(rng: np.random.Generator, dims, n_ctrl: int) -> np.ndarray:
    """Unit-variance band-limited noise: cubic upsampling of a coarse random lattice."""
    ctrl = rng.standard_normal((n_ctrl,) * 3)
    up = ndimage.zoom(ctrl, [d / n_ctrl for d in dims], order=3, mode="grid-wrap", grid_mode=True)
    up = up[: dims[0], : dims[1], : dims[2]]
    return (up - up.mean()) / (up.std() + 1e-12)


def _anatomy_noise(dims, n_ctrl: int, coords) -> np.ndarray:
    """Population-shared smooth pattern, sampled at (warped, normalised) coordinates."""
    rng = np.random.default_rng(ANATOMY_SEED + n_ctrl)
    ctrl = rng.standard_normal((n_ctrl,) * 3)
    ctrl = (ctrl - ctrl.mean()) / ctrl.std()
    # normalised coordinates in [-1.3, 1.3] map onto the control lattice
    idx = [np.clip((c + 1.3) / 2.6 * (n_ctrl - 1), 0, n_ctrl - 1) for c in coords]
    return ndimage.map_coordinates(ctrl, idx, order=3, mode="nearest")


def phantom_fields(spec: PhantomSpec) -> Tuple[PhantomFields, np.random.Generator]:
    rng = np.random.default_rng(spec.subject_seed)
    dims = spec.dims
    axes = np.asarray(spec.axes_mm) * (1.0 + spec.axis_jitter * rng.standard_normal(3))
    coords = np.meshgrid(
        *[(np.arange(n) - (n - 1) / 2.0) * s for n, s in zip(dims, spec.spacing)], indexing="ij"
    )
    warped = [c + spec.warp_amplitude * _smooth_noise(rng, dims, 5) for c in coords]
    u = [w / a for w, a in zip(warped, axes)]

    # cerebrum: an egg tapering towards +y (frontal) with a flattened base
    taper = 1.0 + 0.06 * u[1] + 0.12 * np.minimum(u[2], 0.0) ** 2
    radius = np.sqrt(u[0] ** 2 + u[1] ** 2 + u[2] ** 2) * taper
    # cerebellum: a flatter ellipsoid under the posterior cerebrum
    cb = np.sqrt((u[0] / 0.55) ** 2 + ((u[1] + 0.55) / 0.38) ** 2 + ((u[2] + 0.78) / 0.3) ** 2)

    folds = spec.fold_amplitude * _anatomy_noise(dims, 6, u)
    wm_edge = 0.60 + folds + spec.boundary_amplitude * _smooth_noise(rng, dims, 7)
    gm_edge = 0.85 + 0.5 * folds + 0.5 * spec.boundary_amplitude * _smooth_noise(rng, dims, 7)
    labels = np.zeros(dims, dtype=np.uint8)
    labels[radius < 1.0] = 1
    labels[radius < gm_edge] = 2
    labels[radius < wm_edge] = 3
    inner = cb < 1.0
    labels[inner & (labels == 0)] = 1
    labels[(cb < 0.8) & (labels < 2)] = 2
    labels[(cb < 0.4) & (labels < 3)] = 3

    # interhemispheric fissure from the vertex down towards the ventricles
    fissure = (np.abs(u[0]) < 0.035 * (1.0 + 2.0 * spec.structure_jitter * rng.standard_normal())) & (u[2] > 0.05) & (radius > 0.45)
    labels[fissure & (radius < 1.0)] = 1

    # lateral ventricles, anterior of centre and elongated front to back
    jit = spec.structure_jitter
    vx = 0.2 * (1.0 + jit * rng.standard_normal())
    for side in (-1.0, 1.0):
        vaxes = np.array([0.09, 0.34, 0.12]) * (1.0 + jit * rng.standard_normal(3))
        centre = np.array([side * vx, 0.12 + 0.3 * jit * rng.standard_normal(), 0.05])
        rv = sum((ui - c) ** 2 / v**2 for ui, c, v in zip(u, centre, vaxes))
        labels[(rv < 1.0) & (labels > 0)] = 1
    radius = np.minimum(radius, cb)
    return PhantomFields(radius=radius, labels=labels), rng


def generate_phantom(spec: PhantomSpec) -> Volume:
    """Deterministic phantom for ``spec.subject_seed`` with its brain mask."""
    fields, rng = phantom_fields(spec)
    means = np.array((0.0, *spec.tissue_means))
    data = means[fields.labels]
    data = ndimage.gaussian_filter(data, 0.6, mode="constant")
    texture = ndimage.gaussian_filter(rng.standard_normal(spec.dims), spec.texture_sigma, mode="wrap")
    texture /= texture.std() + 1e-12
    data = data * (1.0 + spec.texture_amplitude * texture)
    mask = fields.radius < 1.0
    data = np.where(mask, np.maximum(data, 1e-3 * spec.tissue_means[0]), 0.0)
    origin = tuple(-(n - 1) / 2.0 * s for n, s in zip(spec.dims, spec.spacing))
    return Volume(data, spec.spacing, origin, mask)


def template_phantom(dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0)) -> Volume:
    """The atlas used for harmonization: the population-mean anatomy.

    It has the shared folding pattern and texture but none of the
    per-subject shape variation, like an averaged brain template.
    """
    spec = PhantomSpec(
        TEMPLATE_SEED, tuple(dims), tuple(spacing),
        axis_jitter=0.0, warp_amplitude=0.0, boundary_amplitude=0.0, structure_jitter=0.0,
    )
    return generate_phantom(spec)


# ---------------------------------------------------------------------------
# variants


@dataclass(frozen=True)
class TransformSpec:
    """One simulated acquisition change.

    ``params`` may pin the outcome explicitly (``parameters`` for the affine,
    ``offset``, ``gamma``, ``coefficients``); anything left out is drawn from
    ``seed`` within the default ranges.
    """

    kind: str
    params: Dict[str, object] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ValueError(f"unknown transform kind {self.kind!r}; expected one of {VARIANT_KINDS}")
        p = self.params
        if self.kind == "gamma_contrast" and "gamma" in p:
            g = float(p["gamma"])
            # gamma == 1 is admitted as the identity check
            if not (GAMMA_RANGE[0] <= g <= GAMMA_RANGE[1] or g == 1.0):
                raise ValueError(f"gamma must lie in {GAMMA_RANGE}, got {g}")
        if self.kind == "affine_jitter":
            if float(p.get("rotation_deg", JITTER_ROTATION_DEG)) > JITTER_ROTATION_DEG:
                raise ValueError("affine_jitter rotation bound exceeds 15 degrees")
            if float(p.get("translation_mm", JITTER_TRANSLATION_MM)) > JITTER_TRANSLATION_MM:
                raise ValueError("affine_jitter translation bound exceeds 10 mm")
            lo, hi = p.get("scale_range", JITTER_SCALE)
            if lo < JITTER_SCALE[0] or hi > JITTER_SCALE[1] or lo > hi:
                raise ValueError("affine_jitter scale range must lie within [0.9, 1.1]")


def random_jitter_parameters(
    rng: np.random.Generator,
    rotation_deg: float = JITTER_ROTATION_DEG,
    translation_mm: float = JITTER_TRANSLATION_MM,
    scale_range=JITTER_SCALE,
) -> np.ndarray:
    """12 affine parameters: random-axis rotation, in-ball translation, per-axis scale."""
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    angle = math.radians(rng.uniform(0.0, rotation_deg))
    euler = Rotation.from_rotvec(axis * angle).as_euler("xyz")
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    shift = direction * translation_mm * rng.uniform() ** (1.0 / 3.0)
    scales = rng.uniform(scale_range[0], scale_range[1], 3)
    p = np.zeros(12)
    p[:3] = shift
    p[3:6] = euler
    p[6:9] = np.log(scales)
    return p


def bias_coefficients(rng: np.random.Generator, degree: int = BIAS_DEGREE) -> np.ndarray:
    lo = rng.uniform(*BIAS_LOW_RANGE)
    hi = rng.uniform(*BIAS_HIGH_RANGE)
    lo, hi = min(lo, hi), max(lo, hi)
    return rng.uniform(lo, hi, len(_poly.monomial_degrees(degree)))


def apply_transform(v: Volume, spec: TransformSpec) -> Volume:
    """Apply one simulated variant to ``v`` (pure; ``v`` is untouched)."""
    rng = np.random.default_rng(spec.seed)
    p = spec.params
    if spec.kind == "affine_jitter":
        if "parameters" in p:
            params = np.asarray(p["parameters"], dtype=np.float64)
        else:
            params = random_jitter_parameters(
                rng,
                float(p.get("rotation_deg", JITTER_ROTATION_DEG)),
                float(p.get("translation_mm", JITTER_TRANSLATION_MM)),
                p.get("scale_range", JITTER_SCALE),
            )
        t = AffineTransform.from_parameters(params, center=v.center())
        return resample(v, t)

    data = v.data.astype(np.float64)
    if spec.kind == "intensity_shift":
        if "offset" in p:
            offset = float(p["offset"])
        else:
            ref = float(np.max(v.masked_values()))
            offset = rng.uniform(-SHIFT_FRACTION, SHIFT_FRACTION) * ref
        region = v.mask if v.mask is not None else np.ones(v.dims, dtype=bool)
        return v.replace(data=np.where(region, data + offset, data))

    if spec.kind == "gamma_contrast":
        gamma = float(p["gamma"]) if "gamma" in p else rng.uniform(*GAMMA_RANGE)
        lo, hi = float(data.min()), float(data.max())
        if hi <= lo:
            return v
        out = lo + ((data - lo) / (hi - lo)) ** gamma * (hi - lo)
        return v.replace(data=out)

    # bias_field
    if v.mask is None:
        raise MissingMask("bias_field variant needs a brain mask")
    degree = int(p.get("degree", BIAS_DEGREE))
    coef = np.asarray(p["coefficients"], dtype=np.float64) if "coefficients" in p else bias_coefficients(rng, degree)
    field_ = np.exp(_poly.evaluate_field(v.dims, coef, degree))
    return v.replace(data=data * field_)


# ---------------------------------------------------------------------------
# datasets


@dataclass(frozen=True)
class SimulatedImage:
    entry: ManifestEntry
    volume: Volume


def _subject_plan(seed: int, n_subjects: int, variants_per_subject: int):
    root = np.random.SeedSequence(seed)
    for index, child in enumerate(root.spawn(n_subjects)):
        subject_seed = int(child.generate_state(1, np.uint64)[0])
        variant_seeds = [int(c.generate_state(1, np.uint64)[0]) for c in child.spawn(variants_per_subject)]
        yield index, subject_seed, variant_seeds


def simulate_subject(
    index: int, subject_seed: int, variant_seeds: Sequence[int], dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0),
    suffix: str = ".vol",
) -> List[SimulatedImage]:
    subject = f"sub-{index + 1:04d}"
    original = generate_phantom(PhantomSpec(subject_seed, tuple(dims), tuple(spacing)))
    out = [SimulatedImage(ManifestEntry(f"{subject}_ses-0_original{suffix}", subject, "ses-0", "original"), original)]
    for k, vseed in enumerate(variant_seeds):
        kind = VARIANT_KINDS[k % len(VARIANT_KINDS)]
        variant = apply_transform(original, TransformSpec(kind, seed=vseed))
        session = f"ses-{k + 1}"
        out.append(SimulatedImage(ManifestEntry(f"{subject}_{session}_{kind}{suffix}", subject, session, kind), variant))
    return out


def simulate_cohort(
    n_subjects: int, variants_per_subject: int = 4, seed: int = 0, dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0)
) -> List[SimulatedImage]:
    """In-memory version of :func:`build_simulated_dataset`."""
    images: List[SimulatedImage] = []
    for index, subject_seed, vseeds in _subject_plan(seed, n_subjects, variants_per_subject):
        images.extend(simulate_subject(index, subject_seed, vseeds, dims, spacing))
    return images


def build_simulated_dataset(
    n_subjects: int = 100,
    variants_per_subject: int = 4,
    out_dir=".",
    seed: int = 0,
    dims=(64, 64, 64),
    spacing=(1.0, 1.0, 1.0),
    suffix: str = ".vol",
    workers: int = 1,
) -> Manifest:
    """Write originals plus variants and a ``manifest.csv`` under ``out_dir``."""
    if n_subjects < 1 or variants_per_subject < 0:
        raise ValueError("need n_subjects >= 1 and variants_per_subject >= 0")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plan = list(_subject_plan(seed, n_subjects, variants_per_subject))

    def write(images):
        for img in images:
            save_volume(img.volume, out / img.entry.path)
        return [img.entry for img in images]

    jobs = [(i, s, v, tuple(dims), tuple(spacing), suffix) for i, s, v in plan]
    entries: List[ManifestEntry] = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for images in pool.map(_simulate_job, jobs):
                entries.extend(write(images))
    else:
        for job in jobs:
            entries.extend(write(_simulate_job(job)))
    manifest = Manifest(entries, root=out)
    manifest.write(out / "manifest.csv")
    logger.info("wrote %d volumes to %s", len(entries), out)
    return manifest


def _simulate_job(job) -> List[SimulatedImage]:
    return simulate_subject(*job)
