"""End-to-end cohort experiments on simulated data.

* :func:`harmonize_cohort` runs the none / affine / full ablation arms.
* :func:`score_cohort` scores every pair of one arm on a shared mask.
* :func:`ablation_summary` compares arms with paired permutation tests.
* :func:`threshold_consistency` compares KDE thresholds of two cohorts.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .harmonize.pipeline import harmonize_arms, intensity_reference
from .harmonize.registration import RegistrationConfig
from .io import Manifest
from .linkage.evaluation import LinkageReport, evaluate, histogram_overlap
from .linkage.thresholds import kde_threshold
from .records import PairScore
from .simmetrics.measures import MeasureConfig, MeasureId
from .simmetrics.scoring import score_all_pairs
from .synth import SimulatedImage, simulate_cohort, template_phantom
from .volume import Volume

logger = logging.getLogger(__name__)

ARMS = ("none", "affine", "full")
LINKAGE_MEASURES = (MeasureId.SSIM, MeasureId.NMI, MeasureId.PCC, MeasureId.GRADSIM)


def scoring_mask(volumes: Sequence[Volume]) -> np.ndarray:
    """Voxels inside every volume's brain mask.

    Scoring all pairs on the intersection keeps each pair's comparison inside
    tissue that both brains cover, so mask-edge disagreements left by
    registration do not count as dissimilarity.
    """
    masks = [v.mask for v in volumes if v.mask is not None]
    if not masks:
        return np.ones(volumes[0].dims, dtype=bool)
    return np.logical_and.reduce(masks)


def _harmonize_one(job):
    volume, template, registration, reference = job
    return harmonize_arms(volume, template, registration, reference)


def harmonize_cohort(
    volumes: Sequence[Volume],
    template: Optional[Volume] = None,
    registration: RegistrationConfig = RegistrationConfig(),
    workers: int = 1,
) -> Dict[str, List[Volume]]:
    """All three ablation arms for every volume, keyed by arm name."""
    template = template if template is not None else template_phantom(volumes[0].dims, volumes[0].spacing)
    reference = intensity_reference(template)
    jobs = [(v, template, registration, reference) for v in volumes]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            arms = list(pool.map(_harmonize_one, jobs))
    else:
        arms = [_harmonize_one(j) for j in jobs]
    return {arm: [a[arm] for a in arms] for arm in ARMS}


def score_cohort(
    volumes: Sequence[Volume],
    ids: Sequence[str],
    measures=LINKAGE_MEASURES,
    cfg: MeasureConfig = MeasureConfig(),
    workers: Optional[int] = None,
) -> List[PairScore]:
    """Every pair of ``volumes`` scored on their shared :func:`scoring_mask`."""
    return score_all_pairs(volumes, ids, measures, cfg, mask=scoring_mask(volumes), workers=workers)


@dataclass
class CohortRun:
    """Simulated images, their harmonized arms and per-arm pair scores."""

    seed: int
    manifest: Manifest
    arms: Dict[str, List[Volume]]
    scores: Dict[str, List[PairScore]]
    seconds: Dict[str, float] = field(default_factory=dict)

    def report(self, arm: str = "full", **kwargs) -> LinkageReport:
        return evaluate(self.manifest, self.scores[arm], dataset_id=f"sim-seed{self.seed}-{arm}", **kwargs)


def run_cohort(
    n_subjects: int = 30,
    variants_per_subject: int = 4,
    seed: int = 0,
    dims=(64, 64, 64),
    arms: Sequence[str] = ARMS,
    measures=LINKAGE_MEASURES,
    registration: RegistrationConfig = RegistrationConfig(),
    workers: int = 1,
) -> CohortRun:
    """Simulate a cohort, harmonize it and score every requested arm."""
    t0 = time.perf_counter()
    images: List[SimulatedImage] = simulate_cohort(n_subjects, variants_per_subject, seed=seed, dims=dims)
    manifest = Manifest([im.entry for im in images])
    t1 = time.perf_counter()
    harmonized = harmonize_cohort([im.volume for im in images], registration=registration, workers=workers)
    t2 = time.perf_counter()
    ids = [im.entry.path for im in images]
    scores = {arm: score_cohort(harmonized[arm], ids, measures, workers=workers) for arm in arms}
    t3 = time.perf_counter()
    seconds = {"simulate": t1 - t0, "harmonize": t2 - t1, "score": t3 - t2}
    logger.info("cohort seed %d: %s", seed, ", ".join(f"{k} {v:.1f}s" for k, v in seconds.items()))
    return CohortRun(seed, manifest, {a: harmonized[a] for a in arms}, scores, seconds)


# ---------------------------------------------------------------------------
# ablation


def paired_permutation_test(
    a: np.ndarray,
    b: np.ndarray,
    statistic: Callable[[np.ndarray, np.ndarray], float],
    n_permutations: int = 1999,
    seed: int = 0,
) -> Tuple[float, float]:
    """One-sided test that ``statistic(a, b)`` is larger than chance.

    ``a[k]`` and ``b[k]`` are two measurements of the same unit (here: one
    pair scored under two arms).  Under the null the two labels are
    exchangeable within each unit, so each permutation swaps a random subset
    of units.  Returns (observed statistic, p-value) with the usual +1
    correction, so p >= 1 / (n_permutations + 1).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError("paired samples differ in shape")
    observed = float(statistic(a, b))
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(n_permutations):
        swap = rng.random(a.shape) < 0.5
        if float(statistic(np.where(swap, b, a), np.where(swap, a, b))) >= observed:
            hits += 1
    return observed, (hits + 1) / (n_permutations + 1)


def _aligned(scores: Sequence[PairScore], measure: str) -> Dict[Tuple[str, str], float]:
    return {(s.id_a, s.id_b): s.score for s in scores if s.measure == measure}


@dataclass
class AblationResult:
    measure: str
    mean_intra: Dict[str, float]
    overlap: Dict[str, float]
    # keyed "none<affine" etc.: (observed gap, p-value)
    mean_tests: Dict[str, Tuple[float, float]]
    overlap_tests: Dict[str, Tuple[float, float]]

    def ordered(self, alpha: float = 0.01) -> bool:
        return all(gap > 0 and p < alpha for gap, p in (*self.mean_tests.values(), *self.overlap_tests.values()))


def ablation_summary(
    manifest: Manifest,
    scores: Dict[str, Sequence[PairScore]],
    measure: str = "SSIM",
    order: Sequence[str] = ARMS,
    n_permutations: int = 1999,
    seed: int = 0,
) -> AblationResult:
    """Mean intra-subject score and intra/inter overlap per arm, with tests.

    For consecutive arms (lo, hi) in ``order`` two one-sided paired
    permutation tests are run over the shared pairs: mean intra score of hi
    exceeds lo, and overlap of lo exceeds hi.
    """
    subject = manifest.subject_of()
    keyed = {arm: _aligned(scores[arm], measure) for arm in order}
    pairs = sorted(keyed[order[0]])
    for arm in order[1:]:
        if sorted(keyed[arm]) != pairs:
            raise ValueError(f"arm {arm!r} scored a different set of pairs")
    truth = np.array([subject[a] == subject[b] for a, b in pairs])
    values = {arm: np.array([keyed[arm][p] for p in pairs]) for arm in order}

    def overlap_gap(lo, hi):
        return histogram_overlap(lo[truth], lo[~truth]) - histogram_overlap(hi[truth], hi[~truth])

    mean_tests, overlap_tests = {}, {}
    for lo, hi in zip(order[:-1], order[1:]):
        key = f"{lo}<{hi}"
        intra_lo, intra_hi = values[lo][truth], values[hi][truth]
        mean_tests[key] = paired_permutation_test(
            intra_lo, intra_hi, lambda x, y: float(y.mean() - x.mean()), n_permutations, seed
        )
        overlap_tests[key] = paired_permutation_test(values[lo], values[hi], overlap_gap, n_permutations, seed)
    return AblationResult(
        measure=measure,
        mean_intra={arm: float(values[arm][truth].mean()) for arm in order},
        overlap={arm: histogram_overlap(values[arm][truth], values[arm][~truth]) for arm in order},
        mean_tests=mean_tests,
        overlap_tests=overlap_tests,
    )


# ---------------------------------------------------------------------------
# threshold consistency


def kde_thresholds(scores: Sequence[PairScore], **kde_options) -> Dict[str, float]:
    """KDE threshold per measure from pooled scores (labels are not used)."""
    by_measure: Dict[str, List[float]] = {}
    for s in scores:
        by_measure.setdefault(s.measure, []).append(s.score)
    return {m: kde_threshold(v, measure=m, **kde_options).tau for m, v in by_measure.items()}


def threshold_consistency(
    scores_a: Sequence[PairScore], scores_b: Sequence[PairScore], **kde_options
) -> Dict[str, Tuple[float, float, float]]:
    """Per measure: (tau_a, tau_b, |tau_a - tau_b|)."""
    ta, tb = kde_thresholds(scores_a, **kde_options), kde_thresholds(scores_b, **kde_options)
    return {m: (ta[m], tb[m], abs(ta[m] - tb[m])) for m in ta if m in tb}
