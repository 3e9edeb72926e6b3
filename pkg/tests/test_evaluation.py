from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from voxlink.errors import ManifestError, OneClassOnly
from voxlink.io import Manifest, ManifestEntry
from voxlink.linkage import (
    LinkageReport,
    PairScore,
    auc,
    classify,
    confusion,
    enumerate_pairs,
    evaluate,
    histogram_overlap,
    sensitivity_specificity,
)

score_lists = st.lists(st.floats(-10, 10, allow_nan=False, allow_infinity=False), min_size=1, max_size=25)


def manifest(subjects, images_per_subject=1):
    return Manifest([
        ManifestEntry(f"s{s}_{k}.vol", f"s{s}", str(k), "original" if k == 0 else "gamma_contrast")
        for s in range(subjects)
        for k in range(images_per_subject)
    ])


def toy_scores(m, measure="SSIM", seed=0, gap=0.5):
    """Intra pairs around 0.9, inter pairs around 0.9 - gap."""
    rng = np.random.default_rng(seed)
    subj = m.subject_of()
    return [
        PairScore(p.id_a, p.id_b, measure, float(rng.normal(0.9 if subj[p.id_a] == subj[p.id_b] else 0.9 - gap, 0.03)))
        for p in enumerate_pairs(m)
    ]


class TestEnumeratePairs:
    def test_counts(self):
        assert len(enumerate_pairs(manifest(15))) == 105
        assert len(enumerate_pairs(manifest(500))) == 124750

    def test_two_images_same_subject(self):
        pairs = enumerate_pairs(manifest(1, 2))
        assert len(pairs) == 1 and pairs[0].intra

    def test_canonical_and_labelled(self):
        pairs = enumerate_pairs(manifest(3, 2))
        assert all(p.id_a < p.id_b for p in pairs)
        assert sum(p.intra for p in pairs) == 3

    def test_needs_two_entries(self):
        with pytest.raises(ManifestError):
            enumerate_pairs(manifest(1))


class TestAuc:
    def test_separated_and_tied(self):
        assert auc([0.9, 0.8, 0.1, 0.2], [True, True, False, False]) == 1.0
        assert auc([0.5] * 6, [True, False] * 3) == 0.5

    def test_toy_set(self):
        scores = [0.9, 0.4, 0.7, 0.7, 0.2, 0.5]
        truth = [True, True, True, False, False, False]
        # 9 intra/inter pairs: 6 concordant + one tie (0.7, 0.7) + ... counted by the oracle
        assert auc(scores, truth) == float(oracles.auc(scores, truth))
        assert auc(scores, truth) == pytest.approx(6.5 / 9, abs=1e-15)

    def test_infinite_sentinel_ranks_first(self):
        assert auc([math.inf, 5.0, 1e300], [True, False, False]) == 1.0
        assert auc([math.inf, math.inf], [True, False]) == 0.5

    def test_one_class(self):
        with pytest.raises(OneClassOnly):
            auc([0.1, 0.2], [True, True])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.floats(-5, 5, allow_nan=False), st.booleans()), min_size=2, max_size=50)
           .filter(lambda v: 0 < sum(t for _, t in v) < len(v)))
    def test_matches_pair_counting_oracle(self, rows):
        scores, truth = zip(*rows)
        assert auc(scores, truth) == float(oracles.auc(scores, truth))

    def test_invariant_under_increasing_transforms(self):
        rng = np.random.default_rng(0)
        scores = np.round(rng.normal(size=50), 1)  # rounding creates ties
        truth = rng.random(50) < 0.4
        base = auc(scores, truth)
        for k in range(20):
            a, b, p = rng.uniform(0.1, 5), rng.uniform(-3, 3), rng.uniform(0.5, 3)
            transforms = [
                lambda s: a * s + b,
                lambda s: np.exp(a * s),
                lambda s: np.sign(s) * np.abs(s) ** p + b,
                lambda s: np.arctan(a * s),
            ]
            assert auc(transforms[k % 4](scores), truth) == base


class TestSensitivitySpecificity:
    def test_examples(self):
        truth = [True] * 10 + [False] * 10
        assert sensitivity_specificity(truth, truth) == (1.0, 1.0)
        assert sensitivity_specificity([True] * 20, truth) == (1.0, 0.0)
        pred = [True] * 9 + [False] + [False] * 8 + [True] * 2
        assert sensitivity_specificity(pred, truth) == (0.9, 0.8)
        c = confusion(pred, truth)
        assert (c.tp, c.fn, c.tn, c.fp) == (9, 1, 8, 2)

    def test_one_class(self):
        with pytest.raises(OneClassOnly):
            sensitivity_specificity([True, False], [False, False])

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.tuples(st.booleans(), st.booleans()), min_size=2, max_size=50)
           .filter(lambda v: 0 < sum(t for _, t in v) < len(v)))
    def test_matches_counting_oracle(self, rows):
        pred, truth = zip(*rows)
        sens, spec = oracles.sensitivity_specificity(pred, truth)
        assert sensitivity_specificity(pred, truth) == (float(sens), float(spec))


class TestOverlap:
    def test_identical_and_disjoint(self):
        x = np.random.default_rng(0).normal(size=300)
        assert histogram_overlap(x, x) == pytest.approx(1.0, abs=1e-9)
        assert histogram_overlap([0.0, 0.1, 0.2], [0.8, 0.9, 1.0]) == 0.0

    def test_small_lists(self):
        assert histogram_overlap([0.0, 0.5, 1.0], [0.5, 0.5]) == pytest.approx(1 / 3, abs=1e-15)
        assert histogram_overlap([0.0, 1.0], [0.0, 1.0, 1.0, 1.0], bins=2) == 0.75

    @settings(max_examples=200, deadline=None)
    @given(score_lists, score_lists)
    def test_matches_binning_oracle(self, intra, inter):
        assert histogram_overlap(intra, inter) == float(oracles.histogram_overlap(intra, inter))

    @settings(max_examples=50, deadline=None)
    @given(score_lists, score_lists)
    def test_bounds_and_symmetry(self, intra, inter):
        v = histogram_overlap(intra, inter)
        assert 0.0 <= v <= 1.0 and v == histogram_overlap(inter, intra)

    def test_empty_class(self):
        with pytest.raises(OneClassOnly):
            histogram_overlap([], [0.1])


class TestEvaluate:
    def test_report(self):
        m = manifest(8, 4)
        scores = toy_scores(m) + toy_scores(m, "PCC", seed=1)
        report = evaluate(m, scores, "kde", dataset_id="toy")
        assert (report.n_pairs, report.n_intra, report.n_inter) == (496, 48, 448)
        assert set(report.measures) == {"SSIM", "PCC"}
        for r in report.measures.values():
            assert r.auc == 1.0 and r.sensitivity == 1.0 and r.specificity == 1.0 and r.overlap == 0.0
            assert r.tp + r.fn == 48 and r.tn + r.fp == 448
            assert set(r.curves) == {"grid", "pooled", "intra", "inter"}
        report.check()

    def test_rates_reproduce_from_counts(self):
        m = manifest(10, 2)
        report = evaluate(m, toy_scores(m, gap=0.05, seed=3), "otsu")
        r = report.measures["SSIM"]
        assert r.sensitivity == r.tp / (r.tp + r.fn) and r.specificity == r.tn / (r.tn + r.fp)
        report.check()

    def test_json_round_trip(self):
        m = manifest(6, 2)
        scores = toy_scores(m) + [PairScore(s.id_a, s.id_b, "PSNR", math.inf if s.score > 0.7 else 20.0 + 10 * s.score)
                                  for s in toy_scores(m)]
        report = evaluate(m, scores, "otsu")
        text = report.to_json()
        assert "Infinity" not in text and "NaN" not in text
        back = LinkageReport.from_json(text)
        assert back.to_json() == text

    def test_fixed_tau(self):
        m = manifest(5, 2)
        report = evaluate(m, toy_scores(m), fixed_tau={"SSIM": 0.65})
        r = report.measures["SSIM"]
        assert r.method == "fixed" and r.tau == 0.65
        pred = classify([s.score for s in toy_scores(m)], 0.65)
        assert r.tp + r.fp == int(pred.sum())

    def test_one_class(self):
        m = manifest(5)
        with pytest.raises(OneClassOnly):
            evaluate(m, toy_scores(m), "otsu")

    def test_unknown_path_and_mismatched_pairs(self):
        m = manifest(4, 2)
        scores = toy_scores(m)
        with pytest.raises(ManifestError):
            evaluate(m, scores + [PairScore("x.vol", "s0_0.vol", "SSIM", 0.5)], "otsu")
        with pytest.raises(ValueError):
            evaluate(m, scores + toy_scores(m, "PCC")[:-1], "otsu")

    def test_digest_covers_every_row(self):
        m = manifest(5, 2)
        scores = toy_scores(m)
        a = evaluate(m, scores, "otsu").score_digest
        assert a == evaluate(m, scores[::-1], "otsu").score_digest
        changed = scores[:-1] + [PairScore(scores[-1].id_a, scores[-1].id_b, "SSIM", scores[-1].score + 1e-3)]
        assert a != evaluate(m, changed, "otsu").score_digest
