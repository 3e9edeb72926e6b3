from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from voxlink.errors import NonConvergence, TooFewScores, Unimodal
from voxlink.linkage import (
    ThresholdModel,
    classify,
    estimate_threshold,
    fixed_threshold,
    gmm_threshold,
    kde_threshold,
    otsu_threshold,
    trim_scores,
)


def two_gaussians(seed, mu=(0.3, 0.9), sd=0.02, n=(500, 500)):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(mu[0], sd, n[0]), rng.normal(mu[1], sd, n[1])])


class TestKde:
    def test_two_gaussian_valley(self):
        model = kde_threshold(two_gaussians(0))
        assert 0.5 <= model.tau <= 0.7
        assert model.method == "kde"
        d = model.diagnostics
        assert d["n_scores"] == 1000 and d["trim_fraction"] == 0.025 and d["grid_points"] == 2000
        assert len(d["mode_locations"]) >= 2 and d["bandwidth"] > 0

    @pytest.mark.parametrize("seed", range(5))
    def test_symmetric_mixture_near_midpoint(self, seed):
        mu1, mu2 = 2.0, 5.0
        model = kde_threshold(two_gaussians(seed, (mu1, mu2), 0.4, (400, 400)))
        assert abs(model.tau - (mu1 + mu2) / 2) <= 0.05 * (mu2 - mu1)

    def test_constant_scores_are_unimodal(self):
        with pytest.raises(Unimodal):
            kde_threshold([0.5] * 100)

    def test_single_cluster_is_unimodal(self):
        with pytest.raises(Unimodal):
            kde_threshold(np.random.default_rng(1).normal(size=500))

    def test_too_few_scores(self):
        with pytest.raises(TooFewScores):
            kde_threshold(np.arange(19.0))

    def test_trim_skipped_for_small_lists(self):
        model = kde_threshold(two_gaussians(2, n=(60, 60)))
        assert model.diagnostics["trim_fraction"] == 0.0 and model.diagnostics["n_used"] == 120

    def test_non_finite_scores_left_out(self):
        scores = np.concatenate([two_gaussians(3), [math.inf] * 7])
        model = kde_threshold(scores)
        assert model.diagnostics["n_nonfinite"] == 7 and 0.5 <= model.tau <= 0.7

    def test_trim_scores(self):
        assert trim_scores(np.arange(40.0)[::-1], 0.025).tolist() == list(np.arange(1.0, 39.0))
        assert trim_scores(np.arange(10.0), 0.025).tolist() == list(np.arange(10.0))

    def test_dominant_modes_ignore_small_bump(self):
        rng = np.random.default_rng(4)
        scores = np.concatenate([rng.normal(0.0, 0.1, 600), rng.normal(1.0, 0.1, 400), rng.normal(3.0, 0.05, 12)])
        model = kde_threshold(scores, trim=0.0)
        assert 0.2 < model.tau < 0.8


class TestOtsu:
    def test_two_values(self):
        scores = [0, 0, 0, 1, 1, 1]
        model = otsu_threshold(scores)
        assert 0 < model.tau <= 1
        assert classify(scores, model).tolist() == [False] * 3 + [True] * 3

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=50).filter(lambda v: max(v) > min(v)))
    def test_matches_exhaustive_oracle(self, scores):
        _, upper = oracles.otsu_split(scores)
        assert classify(scores, otsu_threshold(scores)).tolist() == upper

    def test_too_few(self):
        with pytest.raises(TooFewScores):
            otsu_threshold([1.0])


class TestGmm:
    @pytest.mark.parametrize("method", [gmm_threshold, otsu_threshold])
    def test_delta_clusters(self, method):
        assert 0.2 < method([0.2] * 20 + [0.8] * 20).tau < 0.8

    def test_equal_posterior_point(self):
        model = gmm_threshold(two_gaussians(5, (0.0, 1.0), 0.1, (500, 500)))
        assert model.diagnostics["reliable"]
        assert abs(model.tau - 0.5) < 0.03

    def test_single_cluster(self):
        x = np.random.default_rng(6).normal(size=400)
        try:
            model = gmm_threshold(x)
        except NonConvergence:
            return
        assert model.diagnostics["reliable"] is False

    def test_constant_input(self):
        with pytest.raises(NonConvergence):
            gmm_threshold([1.0] * 10)


class TestEquivariance:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.1, 10.0), st.floats(-5.0, 5.0), st.sampled_from(["kde", "otsu", "gmm"]))
    def test_affine_map_of_scores(self, seed, a, b, method):
        scores = two_gaussians(seed, (0.3, 0.8), 0.04, (300, 200))
        base = estimate_threshold(scores, method)
        moved = estimate_threshold(a * scores + b, method)
        if method == "kde":
            resolution = a * np.ptp(trim_scores(scores, 0.025)) / 1999
        elif method == "otsu":
            resolution = a * np.ptp(scores) / 256
        else:
            resolution = 1e-6 * a
        assert abs(moved.tau - (a * base.tau + b)) <= resolution + 1e-9 * max(1.0, abs(b))
        assert np.array_equal(classify(scores, base), classify(a * scores + b, moved))


class TestClassify:
    def test_decision_rule(self):
        tau = 0.7
        eps = 1e-12 * tau
        assert classify([tau, tau - eps, math.inf, math.nan], tau).tolist() == [True, False, True, False]

    def test_fixed_threshold(self):
        model = fixed_threshold(0.4, "SSIM")
        assert model.method == "fixed" and model.measure == "SSIM"
        with pytest.raises(ValueError):
            fixed_threshold(math.inf)

    def test_model_dict_round_trip(self):
        model = kde_threshold(two_gaussians(7), measure="PCC")
        back = ThresholdModel.from_dict(model.to_dict())
        assert (back.tau, back.method, back.measure) == (model.tau, "kde", "PCC")
        assert back.diagnostics == model.diagnostics

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            estimate_threshold([0.1, 0.2], "median")
