from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxlink import _poly
from voxlink.errors import MissingMask
from voxlink.io import Manifest, load_volume
from voxlink.synth import (
    PhantomSpec,
    TransformSpec,
    apply_transform,
    build_simulated_dataset,
    generate_phantom,
    phantom_fields,
    random_jitter_parameters,
    simulate_cohort,
    template_phantom,
)
from voxlink.volume import AffineTransform

DIMS = (32, 32, 32)


@pytest.fixture(scope="module")
def phantom():
    return generate_phantom(PhantomSpec(11, DIMS))


class TestPhantom:
    def test_deterministic(self, phantom):
        again = generate_phantom(PhantomSpec(11, DIMS))
        assert again.data.tobytes() == phantom.data.tobytes()
        assert np.array_equal(again.mask, phantom.mask)

    def test_mask_is_outer_surface_interior(self, phantom):
        fields, _ = phantom_fields(PhantomSpec(11, DIMS))
        assert np.array_equal(phantom.mask, fields.radius < 1.0)
        assert not phantom.data[~phantom.mask].any()
        assert (phantom.data[phantom.mask] > 0).all()

    def test_tissue_labels_ordered(self, phantom):
        fields, _ = phantom_fields(PhantomSpec(11, DIMS))
        means = [phantom.data[fields.labels == k].mean() for k in (1, 2, 3)]
        assert means[0] < means[1] < means[2]

    def test_twenty_subjects_pairwise_distinct(self):
        vols = [generate_phantom(PhantomSpec(seed, DIMS)).data.tobytes() for seed in range(20)]
        assert all(a != b for a, b in itertools.combinations(vols, 2))

    def test_template_is_fixed(self):
        assert template_phantom(DIMS) == template_phantom(DIMS)

    @pytest.mark.parametrize(
        "kwargs",
        [dict(tissue_means=(300.0, 200.0, 1000.0)), dict(dims=(16, 32, 32)), dict(spacing=(1.0, 0.0, 1.0))],
    )
    def test_spec_validation(self, kwargs):
        with pytest.raises(ValueError):
            PhantomSpec(1, **kwargs)


class TestTransforms:
    def test_zero_shift_is_identity(self, phantom):
        assert apply_transform(phantom, TransformSpec("intensity_shift", {"offset": 0.0})) == phantom

    def test_shift_adds_inside_mask(self, phantom):
        out = apply_transform(phantom, TransformSpec("intensity_shift", {"offset": 25.0}))
        np.testing.assert_allclose(out.data[phantom.mask], phantom.data[phantom.mask] + 25.0, rtol=1e-6)
        assert not out.data[~phantom.mask].any()

    def test_unit_gamma_is_identity(self, phantom):
        unit = phantom.replace(data=phantom.data / phantom.data.max())
        out = apply_transform(unit, TransformSpec("gamma_contrast", {"gamma": 1.0}))
        np.testing.assert_allclose(out.data, unit.data, atol=1e-6)

    def test_zero_bias_is_identity(self, phantom):
        n = len(_poly.monomial_degrees(3))
        out = apply_transform(phantom, TransformSpec("bias_field", {"coefficients": np.zeros(n)}))
        np.testing.assert_array_equal(out.data, phantom.data)

    def test_bias_field_multiplies_by_exp_polynomial(self, phantom):
        coef = np.random.default_rng(0).uniform(0.1, 0.2, len(_poly.monomial_degrees(3)))
        out = apply_transform(phantom, TransformSpec("bias_field", {"coefficients": coef}))
        expected = phantom.data * np.exp(_poly.evaluate_field(DIMS, coef, 3))
        np.testing.assert_allclose(out.data, expected, rtol=1e-5)

    def test_bias_needs_mask(self, phantom):
        with pytest.raises(MissingMask):
            apply_transform(phantom.replace(mask=None), TransformSpec("bias_field"))

    def test_affine_uses_given_parameters(self, phantom):
        p = np.zeros(12)
        p[:3] = [2.0, 0.0, 0.0]
        out = apply_transform(phantom, TransformSpec("affine_jitter", {"parameters": p}))
        np.testing.assert_allclose(out.data[4:, :, :], phantom.data[2:-2, :, :], atol=1e-4)

    @pytest.mark.parametrize("seed", range(3))
    @pytest.mark.parametrize("kind", ["intensity_shift", "gamma_contrast"])
    def test_monotone_variants_preserve_rank(self, phantom, kind, seed):
        out = apply_transform(phantom, TransformSpec(kind, seed=seed))
        a, b = phantom.data[phantom.mask].astype(np.float64), out.data[phantom.mask].astype(np.float64)
        order = np.argsort(a, kind="stable")
        assert np.all(np.diff(b[order]) >= -1e-3 * np.abs(b).max())

    @pytest.mark.parametrize(
        "kind,params",
        [
            ("gamma_contrast", {"gamma": 0.05}),
            ("gamma_contrast", {"gamma": 1.5}),
            ("affine_jitter", {"rotation_deg": 20.0}),
            ("affine_jitter", {"translation_mm": 11.0}),
            ("affine_jitter", {"scale_range": (0.8, 1.0)}),
            ("warp", {}),
        ],
    )
    def test_spec_bounds(self, kind, params):
        with pytest.raises(ValueError):
            TransformSpec(kind, params)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**63))
    def test_jitter_within_bounds(self, seed):
        p = random_jitter_parameters(np.random.default_rng(seed))
        t = AffineTransform.from_parameters(p)
        rot = t.matrix[:3, :3] @ np.diag(np.exp(-p[6:9]))
        angle = np.degrees(np.arccos(np.clip((np.trace(rot) - 1) / 2, -1, 1)))
        assert angle <= 15.0 + 1e-9
        assert np.linalg.norm(p[:3]) <= 10.0 + 1e-9
        assert np.all((np.exp(p[6:9]) >= 0.9 - 1e-12) & (np.exp(p[6:9]) <= 1.1 + 1e-12))
        assert not p[9:].any()


class TestDatasets:
    def test_minimal_dataset(self, tmp_path):
        m = build_simulated_dataset(1, 0, tmp_path, seed=3, dims=DIMS)
        assert len(m) == 1
        assert sorted(p.name for p in tmp_path.glob("*.vol")) == [m[0].path]

    def test_label_structure(self, tmp_path):
        m = build_simulated_dataset(3, 4, tmp_path, seed=3, dims=DIMS)
        assert len(m) == 15
        assert len(list(tmp_path.glob("*.vol"))) == 15
        for subject in {e.subject_id for e in m}:
            tags = sorted(e.variant_tag for e in m if e.subject_id == subject)
            assert tags == sorted(["original", "affine_jitter", "intensity_shift", "gamma_contrast", "bias_field"])
        back = Manifest.read(tmp_path / "manifest.csv")
        assert back.entries == m.entries
        assert load_volume(back.resolve(back[0])).dims == DIMS

    def test_dataset_is_reproducible(self, tmp_path):
        build_simulated_dataset(2, 2, tmp_path / "a", seed=9, dims=DIMS)
        build_simulated_dataset(2, 2, tmp_path / "b", seed=9, dims=DIMS)
        for f in sorted((tmp_path / "a").iterdir()):
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_cohort_matches_dataset(self, tmp_path):
        m = build_simulated_dataset(2, 1, tmp_path, seed=4, dims=DIMS)
        images = simulate_cohort(2, 1, seed=4, dims=DIMS)
        assert [im.entry for im in images] == m.entries
        for im in images:
            assert load_volume(tmp_path / im.entry.path) == im.volume

    def test_rejects_empty(self, tmp_path):
        with pytest.raises(ValueError):
            build_simulated_dataset(0, 4, tmp_path)
