import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffdistill.gmm_world import (
    Dataset,
    GmmComponent,
    GmmSpec,
    SpecError,
    analytic_epsilon,
    default_world,
    gmm_log_density,
    marginal_at,
    mixture_mean,
    sample_dataset,
)


def fd_score(mixture, z, h=1e-4):
    g = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        g[i] = (gmm_log_density(mixture, z + e) - gmm_log_density(mixture, z - e)) / (2 * h)
    return g


def three_component():
    return [
        GmmComponent(0.2, [0.0, 1.0], [1.0, 0.5]),
        GmmComponent(0.5, [2.0, -1.0], [0.7, 1.3]),
        GmmComponent(0.3, [-1.5, 0.5], [2.0, 0.8]),
    ]


class TestSpec:
    def test_rejects_tiny_std(self):
        with pytest.raises(SpecError):
            sample_dataset(GmmSpec(2, [[GmmComponent(1.0, [0, 0], [1e-12, 1])]]), 4, 7)

    def test_rejects_bad_weights(self):
        with pytest.raises(SpecError):
            GmmSpec(1, [[GmmComponent(0.5, [0], [1]), GmmComponent(0.4, [1], [1])]])

    @pytest.mark.parametrize("classes", [[], [[]]])
    def test_rejects_empty(self, classes):
        with pytest.raises(SpecError):
            GmmSpec(1, classes)

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(SpecError):
            GmmSpec(3, [[GmmComponent(1.0, [0, 0], [1, 1])]])

    def test_json_round_trip(self, world):
        doc = json.loads(json.dumps(world.to_dict()))
        back = GmmSpec.from_dict(doc)
        assert back.digest() == world.digest()
        assert set(doc) == {"dimension", "classes"}
        assert set(doc["classes"][0][0]) == {"weight", "mean", "std"}

    def test_malformed_document(self):
        with pytest.raises(SpecError):
            GmmSpec.from_dict({"dimension": 2})

    def test_default_world_shape(self, world):
        assert world.dimension == 8 and world.n_classes == 4
        for comps in world.classes:
            assert len(comps) == 3
            for c in comps:
                assert np.all((c.mean >= -4) & (c.mean <= 4))
                assert np.all((c.std >= 0.3) & (c.std <= 1.2))

    def test_default_world_is_reproducible(self):
        assert default_world().digest() == default_world().digest()


class TestSampleDataset:
    def test_small_unit_sample(self, unit_world):
        ds = sample_dataset(unit_world, 4, 7)
        assert ds.points.shape == (4, 2)
        assert np.linalg.norm(ds.points.mean(axis=0)) < 3 / np.sqrt(4)

    def test_counts_and_determinism(self, world):
        a = sample_dataset(world, 30, 5)
        b = sample_dataset(world, 30, 5)
        assert np.array_equal(a.points, b.points)
        assert np.bincount(a.labels).tolist() == [30] * 4
        assert a.spec_digest == world.digest()

    def test_rejects_zero(self, world):
        with pytest.raises(ValueError):
            sample_dataset(world, 0, 1)

    def test_class_mean_matches_mixture_mean(self):
        spec = GmmSpec(2, [
            [GmmComponent(0.3, [2.0, -1.0], [0.5, 0.5]), GmmComponent(0.7, [-1.0, 1.0], [0.8, 0.4])],
            [GmmComponent(1.0, [0.0, 0.0], [1.0, 1.0])],
        ])
        ds = sample_dataset(spec, 500, 3)
        expected = 0.3 * np.array([2.0, -1.0]) + 0.7 * np.array([-1.0, 1.0])
        assert np.allclose(mixture_mean(spec.classes[0]), expected)
        assert np.linalg.norm(ds.class_points(0).mean(axis=0) - expected) < 0.2

    def test_large_sample_moments(self):
        spec = GmmSpec(3, [[GmmComponent(1.0, [1.0, -2.0, 0.5], [0.5, 1.5, 1.0])]])
        x = sample_dataset(spec, 20000, 99).points
        assert np.all(np.abs(x.mean(axis=0) - [1.0, -2.0, 0.5]) < 0.05)
        assert np.all(np.abs(x.var(axis=0) - np.array([0.5, 1.5, 1.0]) ** 2) < 0.05)

    def test_dataset_json(self, world):
        ds = sample_dataset(world, 3, 1)
        doc = json.loads(json.dumps(ds.to_dict()))
        assert set(doc) == {"dimension", "points", "seed", "spec_digest"}
        assert set(doc["points"][0]) == {"x", "y"}
        back = Dataset.from_dict(doc)
        assert np.array_equal(back.points, ds.points) and np.array_equal(back.labels, ds.labels)


class TestMarginal:
    def test_identity_at_one(self, world):
        for c in range(world.n_classes):
            for a, b in zip(marginal_at(world, c, 1.0), world.classes[c]):
                assert np.allclose(a.mean, b.mean, atol=1e-12, rtol=0)
                assert np.allclose(a.std, b.std, atol=1e-12, rtol=0)
                assert a.weight == b.weight

    def test_unit_fixed_point(self):
        spec = GmmSpec(1, [[GmmComponent(1.0, [0.0], [1.0])]])
        (m,) = marginal_at(spec, 0, 0.5)
        assert m.mean[0] == 0.0 and m.std[0] ** 2 == pytest.approx(1.0, abs=1e-15)

    def test_arithmetic(self):
        spec = GmmSpec(1, [[GmmComponent(1.0, [2.0], [0.5])]])
        (m,) = marginal_at(spec, 0, 0.25)
        assert m.mean[0] == pytest.approx(1.0, abs=1e-15)
        assert m.std[0] ** 2 == pytest.approx(0.8125, abs=1e-15)

    @pytest.mark.parametrize("a", [0.0, -0.1, 1.5])
    def test_range(self, world, a):
        with pytest.raises(ValueError):
            marginal_at(world, 0, a)

    def test_small_alpha_bar_limit(self, rng):
        a = 1e-4
        comps = []
        for _ in range(5):
            mu = rng.normal(size=8)
            comps.append(GmmComponent(0.2, 5 * mu / np.linalg.norm(mu) * rng.uniform(), rng.uniform(0.3, 1.2, 8)))
        spec = GmmSpec(8, [comps])
        for c in range(spec.n_classes):
            for orig, m in zip(spec.classes[c], marginal_at(spec, c, a)):
                assert np.linalg.norm(m.mean) <= 0.05
                assert np.allclose(m.std**2, a * orig.std**2 + (1 - a), rtol=0, atol=1e-15)
                assert np.all((m.std**2 >= 0.9999) & (m.std**2 <= 1.0001))


class TestLogDensity:
    def test_standard_normal_mode(self):
        comp = [GmmComponent(1.0, [0.0], [1.0])]
        assert gmm_log_density(comp, [0.0]) == pytest.approx(-0.9189385332046727, abs=1e-12)

    def test_duplicate_components_collapse(self, rng):
        one = [GmmComponent(1.0, [0.3, -1.0], [0.7, 1.2])]
        two = [GmmComponent(0.5, [0.3, -1.0], [0.7, 1.2])] * 2
        for z in rng.normal(size=(20, 2)) * 3:
            assert gmm_log_density(two, z) == pytest.approx(gmm_log_density(one, z), abs=1e-12)

    def test_three_component_naive_sum(self):
        # mpmath evaluation of the plain weighted sum of densities
        assert gmm_log_density(three_component(), [1.3, -0.2]) == pytest.approx(-2.936275393179777, abs=1e-12)

    def test_batch_matches_single(self, rng):
        z = rng.normal(size=(5, 2))
        batch = gmm_log_density(three_component(), z)
        assert np.allclose(batch, [gmm_log_density(three_component(), zi) for zi in z], rtol=0, atol=1e-14)

    def test_far_point_is_finite(self):
        val = gmm_log_density(three_component(), [300.0, -400.0])
        assert np.isfinite(val)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            gmm_log_density(three_component(), [1.0, 2.0, 3.0])


class TestAnalyticEpsilon:
    def test_unit_gaussian_closed_form(self):
        spec = GmmSpec(2, [[GmmComponent(1.0, [0, 0], [1, 1])]])
        eps = analytic_epsilon(spec, 0, [1.0, -2.0], 0.5)
        assert np.allclose(eps, [0.70710678, -1.41421356], atol=1e-8)

    def test_zero_at_data_end(self, world, rng):
        assert np.all(analytic_epsilon(world, 2, rng.normal(size=8), 1.0) == 0.0)

    def test_symmetric_midpoint(self):
        spec = GmmSpec(1, [[GmmComponent(0.5, [-2.0], [0.6]), GmmComponent(0.5, [2.0], [0.6])]])
        a = 0.4
        eps = analytic_epsilon(spec, 0, [0.0], a)
        # single Gaussian at the mixture mean 0 gives eps = 0 at z = 0
        assert eps[0] == pytest.approx(0.0, abs=1e-15)
        z = np.array([0.0])
        fd = -np.sqrt(1 - a) * fd_score(marginal_at(spec, 0, a), z)
        assert np.allclose(eps, fd, atol=1e-9)
        z = np.array([0.37])
        fd = -np.sqrt(1 - a) * fd_score(marginal_at(spec, 0, a), z)
        assert np.linalg.norm(analytic_epsilon(spec, 0, z, a) - fd) / np.linalg.norm(fd) < 1e-5

    def test_batch_shape(self, world, rng):
        z = rng.normal(size=(7, 8))
        out = analytic_epsilon(world, 1, z, 0.3)
        assert out.shape == (7, 8)
        assert np.allclose(out[3], analytic_epsilon(world, 1, z[3], 0.3))

    @settings(max_examples=40, deadline=None)
    @given(
        c=st.integers(0, 3),
        a=st.floats(1e-4, 0.999),
        seed=st.integers(0, 2**32 - 1),
    )
    def test_matches_finite_difference(self, world, c, a, seed):
        r = np.random.default_rng(seed)
        z = np.sqrt(a) * r.uniform(-4, 4, 8) + r.normal(size=8)
        eps = analytic_epsilon(world, c, z, a)
        fd = -np.sqrt(1 - a) * fd_score(marginal_at(world, c, a), z)
        assert np.linalg.norm(eps - fd) <= 1e-5 * np.linalg.norm(fd) + 1e-10
