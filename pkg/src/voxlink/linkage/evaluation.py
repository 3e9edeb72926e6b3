"""Pair enumeration, classification and the evaluation statistics.

Ground-truth labels come from the manifest's ``subject_id`` column and are
used here only to score a threshold after it has been chosen.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from ..errors import ManifestError, OneClassOnly
from ..io import Manifest
from ..records import PairScore, format_score
from .thresholds import ThresholdModel, estimate_threshold, fixed_threshold

logger = logging.getLogger(__name__)

OVERLAP_BINS = 100
CURVE_POINTS = 200


class LabeledPair(NamedTuple):
    id_a: str
    id_b: str
    intra: bool


def enumerate_pairs(manifest: Manifest) -> List[LabeledPair]:
    """All n(n-1)/2 unordered pairs of manifest paths, canonically ordered.

    ``intra`` is True when both images share a subject_id.
    """
    entries = list(manifest)
    if len(entries) < 2:
        raise ManifestError(f"need at least 2 manifest entries, got {len(entries)}")
    out = []
    for a, b in itertools.combinations(entries, 2):
        lo, hi = (a, b) if a.path < b.path else (b, a)
        out.append(LabeledPair(lo.path, hi.path, a.subject_id == b.subject_id))
    return out


# ---------------------------------------------------------------------------
# decision rule and statistics


def _values(scores) -> np.ndarray:
    return np.asarray([s.score if isinstance(s, PairScore) else s for s in scores], dtype=np.float64)


def classify(scores, model: Union[ThresholdModel, float]) -> np.ndarray:
    """True (intra) where score >= tau.  +inf is intra and NaN is inter."""
    tau = model.tau if isinstance(model, ThresholdModel) else float(model)
    return _values(scores) >= tau


def auc(scores, truth) -> float:
    """Mann-Whitney AUC: P(intra score > inter score), ties counting one half.

    +inf ranks above every finite score.  Raises OneClassOnly when either
    class is empty.
    """
    s = _values(scores)
    t = np.asarray(truth, dtype=bool)
    if s.shape != t.shape:
        raise ValueError("scores and truth differ in length")
    if np.isnan(s).any():
        raise ValueError("AUC is undefined for NaN scores")
    pos, neg = s[t], np.sort(s[~t])
    if len(pos) == 0 or len(neg) == 0:
        raise OneClassOnly("AUC needs both intra and inter pairs")
    below = np.searchsorted(neg, pos, side="left")
    ties = np.searchsorted(neg, pos, side="right") - below
    # integer numerator keeps the result exact
    return float(int(2 * below.sum() + ties.sum()) / (2 * len(pos) * len(neg)))


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn)

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp)


def confusion(pred, truth) -> Confusion:
    p = np.asarray(pred, dtype=bool)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ValueError("predictions and truth differ in length")
    return Confusion(
        tp=int(np.sum(p & t)), fp=int(np.sum(p & ~t)), tn=int(np.sum(~p & ~t)), fn=int(np.sum(~p & t))
    )


def sensitivity_specificity(pred, truth) -> Tuple[float, float]:
    """(tp / (tp + fn), tn / (tn + fp)); OneClassOnly if a class is missing."""
    c = confusion(pred, truth)
    if c.tp + c.fn == 0 or c.tn + c.fp == 0:
        raise OneClassOnly("sensitivity and specificity need both intra and inter pairs")
    return c.sensitivity, c.specificity


def histogram_overlap(intra, inter, bins: int = OVERLAP_BINS) -> float:
    """Sum over shared bins of min(P_b, Q_b) for the two normalised histograms.

    Bins are equal-width over the finite range of both lists together; +inf
    falls in the top bin and -inf in the bottom one.
    """
    a, b = _values(intra), _values(inter)
    if len(a) == 0 or len(b) == 0:
        raise OneClassOnly("overlap needs both intra and inter scores")
    if np.isnan(a).any() or np.isnan(b).any():
        raise ValueError("overlap is undefined for NaN scores")
    both = np.concatenate([a, b])
    finite = both[np.isfinite(both)]
    lo = float(finite.min()) if finite.size else 0.0
    hi = float(finite.max()) if finite.size else 0.0

    def counts(v):
        if hi > lo:
            with np.errstate(invalid="ignore"):
                idx = np.floor((np.clip(v, lo, hi) - lo) / (hi - lo) * bins)
            idx = np.clip(idx, 0, bins - 1).astype(np.int64)
        else:
            idx = np.zeros(len(v), dtype=np.int64)
        return np.bincount(idx, minlength=bins).tolist()

    # exact rational sum, rounded once
    na, nb = len(a), len(b)
    total = sum(min(Fraction(x, na), Fraction(y, nb)) for x, y in zip(counts(a), counts(b)))
    return float(total)


# ---------------------------------------------------------------------------
# report


@dataclass
class MeasureResult:
    measure: str
    tau: float
    method: str
    auc: float
    sensitivity: float
    specificity: float
    overlap: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_scores: int
    diagnostics: Dict[str, object] = field(default_factory=dict)
    # grid plus pooled / intra / inter densities, for plotting
    curves: Dict[str, List[float]] = field(default_factory=dict)


@dataclass
class LinkageReport:
    dataset_id: str
    n_pairs: int
    n_intra: int
    n_inter: int
    measures: Dict[str, MeasureResult]
    # sha256 of the canonical score CSV rows the report was built from
    score_digest: str = ""

    def check(self) -> None:
        """Raise ValueError if the stored counts and rates disagree."""
        for r in self.measures.values():
            if r.tp + r.fn != self.n_intra or r.tn + r.fp != self.n_inter:
                raise ValueError(f"{r.measure}: confusion counts do not add up to the class sizes")
            c = Confusion(r.tp, r.fp, r.tn, r.fn)
            if (c.sensitivity, c.specificity) != (r.sensitivity, r.specificity):
                raise ValueError(f"{r.measure}: rates do not match the confusion counts")

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "n_pairs": self.n_pairs,
            "n_intra": self.n_intra,
            "n_inter": self.n_inter,
            "score_digest": self.score_digest,
            "measures": {k: asdict(v) for k, v in self.measures.items()},
        }

    def to_json(self) -> str:
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "LinkageReport":
        measures = {k: MeasureResult(**v) for k, v in d["measures"].items()}
        return cls(d["dataset_id"], int(d["n_pairs"]), int(d["n_intra"]), int(d["n_inter"]), measures,
                   d.get("score_digest", ""))

    @classmethod
    def from_json(cls, text: str) -> "LinkageReport":
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    """Replace non-finite floats (JSON has none) by the strings used in score CSVs."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)) and not math.isfinite(float(obj)):
        return format_score(float(obj))
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def score_digest(scores: Iterable[PairScore]) -> str:
    rows = sorted(f"{s.id_a},{s.id_b},{s.measure},{format_score(s.score)}" for s in scores)
    return hashlib.sha256("\n".join(rows).encode("utf-8")).hexdigest()


def density_curves(values: np.ndarray, truth: np.ndarray, model: ThresholdModel,
                   points: int = CURVE_POINTS) -> Dict[str, List[float]]:
    """Pooled and per-class Gaussian KDEs on one grid over the finite scores."""
    finite = np.isfinite(values)
    v, t = values[finite], truth[finite]
    if v.size == 0:
        return {}
    lo, hi = float(v.min()), float(v.max())
    if math.isfinite(model.tau):
        lo, hi = min(lo, model.tau), max(hi, model.tau)
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    grid = np.linspace(lo - pad, hi + pad, points)
    out = {"grid": grid.tolist()}
    for name, sel in (("pooled", np.ones(len(v), bool)), ("intra", t), ("inter", ~t)):
        part = v[sel]
        if part.size >= 2 and np.ptp(part) > 0:
            out[name] = stats.gaussian_kde(part)(grid).tolist()
        else:
            out[name] = [0.0] * points
    return out


def _evaluate_measure(measure: str, values: np.ndarray, truth: np.ndarray, method: str,
                      fixed_tau: Optional[float], threshold_options: dict) -> MeasureResult:
    if fixed_tau is not None:
        model = fixed_threshold(fixed_tau, measure)
    else:
        model = estimate_threshold(values, method, measure=measure, **threshold_options)
    pred = classify(values, model)
    c = confusion(pred, truth)
    sens, spec = sensitivity_specificity(pred, truth)
    return MeasureResult(
        measure=measure,
        tau=model.tau,
        method=model.method,
        auc=auc(values, truth),
        sensitivity=sens,
        specificity=spec,
        overlap=histogram_overlap(values[truth], values[~truth]),
        tp=c.tp,
        fp=c.fp,
        tn=c.tn,
        fn=c.fn,
        n_scores=int(len(values)),
        diagnostics=dict(model.diagnostics),
        curves=density_curves(values, truth, model),
    )


def evaluate(
    manifest: Manifest,
    pair_scores: Sequence[PairScore],
    threshold_method: str = "kde",
    fixed_tau: Union[None, float, Dict[str, float]] = None,
    dataset_id: str = "",
    threshold_options: Optional[dict] = None,
    workers: int = 1,
) -> LinkageReport:
    """Threshold, classify and score every measure present in ``pair_scores``.

    ``fixed_tau`` (one value, or one per measure) replaces the estimated
    threshold.  Every pair must name two manifest paths and each measure
    must cover the same set of pairs.  Estimation errors propagate.
    """
    subject = manifest.subject_of()
    by_measure: Dict[str, List[PairScore]] = {}
    for s in pair_scores:
        for pid in (s.id_a, s.id_b):
            if pid not in subject:
                raise ManifestError(f"pair score refers to {pid!r}, which is not in the manifest")
        by_measure.setdefault(s.measure, []).append(s)
    if not by_measure:
        raise ValueError("no pair scores to evaluate")

    pair_sets = {m: {(s.id_a, s.id_b) for s in rows} for m, rows in by_measure.items()}
    first = next(iter(pair_sets.values()))
    for m, rows in by_measure.items():
        if len(pair_sets[m]) != len(rows):
            raise ValueError(f"{m}: duplicate pairs in the score list")
        if pair_sets[m] != first:
            raise ValueError(f"{m}: scored pairs differ from the other measures")
    truth_of = {p: subject[p[0]] == subject[p[1]] for p in first}
    n_intra = sum(truth_of.values())
    n_inter = len(truth_of) - n_intra
    if n_intra == 0 or n_inter == 0:
        raise OneClassOnly(f"evaluation needs both classes (intra={n_intra}, inter={n_inter})")

    def tau_for(m):
        if isinstance(fixed_tau, dict):
            return fixed_tau.get(m)
        return fixed_tau

    def run(m):
        rows = by_measure[m]
        values = np.array([s.score for s in rows], dtype=np.float64)
        truth = np.array([truth_of[(s.id_a, s.id_b)] for s in rows], dtype=bool)
        return _evaluate_measure(m, values, truth, threshold_method, tau_for(m), threshold_options or {})

    names = list(by_measure)
    if workers > 1 and len(names) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, names))
    else:
        results = [run(m) for m in names]
    report = LinkageReport(dataset_id, len(first), n_intra, n_inter, dict(zip(names, results)),
                           score_digest(pair_scores))
    logger.info("evaluated %d measures over %d pairs", len(names), len(first))
    return report
