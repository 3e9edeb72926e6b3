"""Unsupervised thresholds that split pooled pair scores into two clusters.

Three estimators are provided.  :func:`kde_threshold` is the default: a
Gaussian KDE of the (trimmed) pooled scores with the threshold placed at the
density minimum between the two dominant modes.  :func:`gmm_threshold` and
:func:`otsu_threshold` are the alternatives it was compared against.

None of these ever look at ground-truth labels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
from scipy import optimize, signal, stats

from ..errors import NonConvergence, TooFewScores, Unimodal

KDE_MIN_SCORES = 20
TRIM_MIN_SCORES = 200
GMM_MIN_SCORES = 4
OTSU_MIN_SCORES = 2


@dataclass
class ThresholdModel:
    tau: float
    method: str
    measure: Optional[str] = None
    diagnostics: Dict[str, object] = field(default_factory=dict)
    # (grid, density) of the pooled-score KDE, kept for plotting
    curve: Optional[tuple] = None

    def to_dict(self) -> dict:
        return {"measure": self.measure, "tau": self.tau, "method": self.method, "diagnostics": self.diagnostics}

    @classmethod
    def from_dict(cls, d: dict) -> "ThresholdModel":
        return cls(tau=float(d["tau"]), method=d["method"], measure=d.get("measure"), diagnostics=d.get("diagnostics", {}))


def _finite(scores) -> tuple:
    s = np.asarray(scores, dtype=np.float64).ravel()
    ok = np.isfinite(s)
    return s[ok], int((~ok).sum())


def trim_scores(scores: np.ndarray, fraction: float) -> np.ndarray:
    """Drop floor(n * fraction) scores from each end of the sorted list."""
    s = np.sort(scores)
    k = int(math.floor(len(s) * fraction))
    return s[k : len(s) - k] if k > 0 else s


# ---------------------------------------------------------------------------
# KDE valley


def kde_threshold(
    scores: Sequence[float],
    bandwidth: float = 0.25,
    grid: int = 2000,
    trim: float = 0.025,
    min_prominence: float = 0.01,
    measure: Optional[str] = None,
) -> ThresholdModel:
    """Density-valley threshold between the two dominant modes of ``scores``.

    ``bandwidth`` is a factor on the standard deviation of the trimmed
    scores (scipy's ``bw_method``), so the same value works for measures on
    very different scales.  Trimming is skipped below 200 scores.  Non-finite
    scores (the PSNR sentinel) are left out of the density.
    """
    finite, n_nonfinite = _finite(scores)
    n = len(finite)
    applied_trim = trim if n >= TRIM_MIN_SCORES else 0.0
    used = trim_scores(finite, applied_trim)
    if len(used) < KDE_MIN_SCORES:
        raise TooFewScores(f"need >= {KDE_MIN_SCORES} scores after trimming, got {len(used)}")
    lo, hi = float(used.min()), float(used.max())
    if not hi > lo:
        raise Unimodal("all scores are equal")

    kde = stats.gaussian_kde(used, bw_method=bandwidth)
    xs = np.linspace(lo, hi, grid)
    density = kde(xs)
    peaks, props = signal.find_peaks(density, prominence=min_prominence * float(density.max()))
    diagnostics = {
        "n_scores": n,
        "n_used": int(len(used)),
        "n_nonfinite": n_nonfinite,
        "trim_fraction": applied_trim,
        "bandwidth_factor": bandwidth,
        # kde.covariance already includes the factor squared
        "bandwidth": float(math.sqrt(float(kde.covariance[0, 0]))),
        "grid_points": grid,
        "mode_locations": [float(xs[p]) for p in peaks],
    }
    if len(peaks) < 2:
        raise Unimodal(f"found {len(peaks)} density peak(s) with sufficient prominence")

    prom = props["prominences"]
    first = int(np.argmax(prom))
    others = [i for i in range(len(peaks)) if i != first]
    scale = float(prom.max())
    # highest prominence first; among (numerically) equal prominences prefer wider separation
    second = max(others, key=lambda i: (round(prom[i] / scale, 9), abs(int(peaks[i]) - int(peaks[first]))))
    a, b = sorted((int(peaks[first]), int(peaks[second])))
    j = a + 1 + int(np.argmin(density[a + 1 : b]))
    diagnostics["dominant_modes"] = [float(xs[a]), float(xs[b])]
    return ThresholdModel(float(xs[j]), "kde", measure, diagnostics, curve=(xs, density))


# ---------------------------------------------------------------------------
# Otsu


def _otsu_histogram(values: np.ndarray, bins: int):
    lo, hi = float(values.min()), float(values.max())
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.clip(np.searchsorted(edges, values, side="right") - 1, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    return edges, counts


def plateau_center(values: np.ndarray, rtol: float = 1e-9) -> int:
    """Index of the middle of the set of (near-)maximal entries."""
    best = float(np.max(values))
    hits = np.flatnonzero(values >= best - rtol * abs(best))
    return int(hits[len(hits) // 2])


def otsu_cut(values, bins: int = 256) -> Optional[float]:
    """Otsu split point over a ``bins``-bin histogram; ``None`` for constant input.

    Values ``>= cut`` form the upper class.  When several splits maximise the
    between-class variance, the middle one is returned.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0 or not float(v.max()) > float(v.min()):
        return None
    edges, counts = _otsu_histogram(v, bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)[:-1]
    w1 = v.size - w0
    m0 = np.cumsum(counts * centers)[:-1]
    total = float(np.sum(counts * centers))
    with np.errstate(invalid="ignore", divide="ignore"):
        between = w0 * w1 * (m0 / w0 - (total - m0) / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -np.inf)
    k = plateau_center(between)
    return float(edges[k + 1])


def otsu_threshold(scores: Sequence[float], bins: int = 256, measure: Optional[str] = None) -> ThresholdModel:
    finite, n_nonfinite = _finite(scores)
    if len(finite) < OTSU_MIN_SCORES:
        raise TooFewScores(f"need >= {OTSU_MIN_SCORES} finite scores, got {len(finite)}")
    cut = otsu_cut(finite, bins)
    if cut is None:
        raise Unimodal("all scores are equal")
    return ThresholdModel(cut, "otsu", measure, {"n_scores": len(finite), "n_nonfinite": n_nonfinite, "bins": bins})


# ---------------------------------------------------------------------------
# two-component Gaussian mixture


def _kmeans_1d(x: np.ndarray, iters: int = 50) -> np.ndarray:
    centers = np.array([x.min(), x.max()], dtype=np.float64)
    labels = np.zeros(len(x), dtype=int)
    for _ in range(iters):
        labels = (np.abs(x - centers[1]) < np.abs(x - centers[0])).astype(int)
        new = np.array([x[labels == k].mean() if np.any(labels == k) else centers[k] for k in (0, 1)])
        if np.allclose(new, centers):
            break
        centers = new
    return labels


def gmm_threshold(
    scores: Sequence[float], max_iter: int = 100, tol: float = 1e-6, measure: Optional[str] = None
) -> ThresholdModel:
    """Equal-posterior point of a 2-component 1-D Gaussian mixture fitted by EM."""
    x, n_nonfinite = _finite(scores)
    if len(x) < GMM_MIN_SCORES:
        raise TooFewScores(f"need >= {GMM_MIN_SCORES} finite scores, got {len(x)}")
    spread = float(x.var())
    if spread == 0.0:
        raise NonConvergence("all scores are equal; a two-component mixture is not identifiable")
    floor = 1e-6 * spread

    labels = _kmeans_1d(x)
    w = np.array([np.mean(labels == k) for k in (0, 1)])
    mu = np.array([x[labels == k].mean() if w[k] > 0 else x.mean() for k in (0, 1)])
    var = np.array([max(x[labels == k].var(), floor) if w[k] > 0 else spread for k in (0, 1)])
    w = np.clip(w, 1e-6, None)
    w /= w.sum()

    prev = -np.inf
    converged = False
    for it in range(max_iter):
        logp = np.log(w) - 0.5 * np.log(2 * np.pi * var) - (x[:, None] - mu) ** 2 / (2 * var)
        top = logp.max(axis=1, keepdims=True)
        lse = top[:, 0] + np.log(np.exp(logp - top).sum(axis=1))
        loglik = float(lse.mean())
        resp = np.exp(logp - lse[:, None])
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-9):
            break
        w = nk / len(x)
        mu = (resp * x[:, None]).sum(axis=0) / nk
        var = np.maximum((resp * (x[:, None] - mu) ** 2).sum(axis=0) / nk, floor)
        if abs(loglik - prev) < tol:
            converged = True
            break
        prev = loglik
    if not converged:
        raise NonConvergence(f"EM did not converge in {max_iter} iterations")

    order = np.argsort(mu)
    w, mu, var = w[order], mu[order], var[order]
    sd = np.sqrt(var)

    def log_ratio(t):
        l0 = math.log(w[0]) - math.log(sd[0]) - (t - mu[0]) ** 2 / (2 * var[0])
        l1 = math.log(w[1]) - math.log(sd[1]) - (t - mu[1]) ** 2 / (2 * var[1])
        return l0 - l1

    # Ashman's D: below 2 the components are not clearly separated
    separation = float(abs(mu[1] - mu[0]) * math.sqrt(2.0 / (var[0] + var[1])))
    reliable = separation > 2.0
    if mu[1] > mu[0] and log_ratio(mu[0]) > 0 > log_ratio(mu[1]):
        tau = float(optimize.brentq(log_ratio, mu[0], mu[1], xtol=1e-12 * max(1.0, abs(mu[1]))))
    else:
        tau = float(0.5 * (mu[0] + mu[1]))
        reliable = False
    diagnostics = {
        "n_scores": len(x),
        "n_nonfinite": n_nonfinite,
        "weights": w.tolist(),
        "means": mu.tolist(),
        "stds": sd.tolist(),
        "iterations": it + 1,
        "ashman_d": separation,
        "reliable": bool(reliable),
    }
    return ThresholdModel(tau, "gmm", measure, diagnostics)


def fixed_threshold(tau: float, measure: Optional[str] = None) -> ThresholdModel:
    """A caller-supplied threshold, e.g. one carried over from another cohort."""
    tau = float(tau)
    if not math.isfinite(tau):
        raise ValueError("a fixed threshold must be finite")
    return ThresholdModel(tau, "fixed", measure, {})


METHODS = {"kde": kde_threshold, "gmm": gmm_threshold, "otsu": otsu_threshold}


def estimate_threshold(scores, method: str = "kde", measure: Optional[str] = None, **kwargs) -> ThresholdModel:
    if method not in METHODS:
        raise ValueError(f"unknown threshold method {method!r}; expected one of {sorted(METHODS)}")
    return METHODS[method](scores, measure=measure, **kwargs)
