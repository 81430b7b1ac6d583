import numpy as np
import pytest

from hint.config import ArchitectureConfig
from hint.errors import DimensionError, ProblemError
from hint.services.coupling_service import CouplingLayer, InnMap, build_inn_map, make_subnets
from hint.services.hint_service import build_hint_map
from hint.services.numerics_service import HouseholderStack
from hint.services.posterior_service import (
    PosteriorSampleSet,
    sample_joint_from_map,
    sample_posterior_case1,
    sample_posterior_case2,
    sample_posterior_hint,
)


def identity_inn(dim, rng):
    d1, d2 = (dim + 1) // 2, dim // 2
    s_net, t_net = make_subnets(d1, d2, ArchitectureConfig(init_scale=0.0), rng)
    return InnMap([CouplingLayer(dim, (d1, d2), HouseholderStack(dim), s_net, t_net)], dim)


def identity_hint(m, d, rng):
    return build_hint_map(m, d, ArchitectureConfig(n_layers=2, depth=1, init_scale=0.0), rng)


class TestCase1Sampler:
    def test_identity_map(self, rng):
        y = np.array([0.5, -1.0])
        result = sample_posterior_case1(identity_inn(5, rng), y, 50, np.random.default_rng(1))
        expected_z = np.random.default_rng(1).standard_normal((50, 3))
        np.testing.assert_array_equal(result.samples[:, :2], np.tile(y, (50, 1)))
        np.testing.assert_array_equal(result.samples[:, 2:], expected_z)

    def test_deterministic(self, rng, small_arch):
        tmap = build_inn_map(4, small_arch, rng)
        a = sample_posterior_case1(tmap, np.array([0.3]), 20, np.random.default_rng(5))
        b = sample_posterior_case1(tmap, np.array([0.3]), 20, np.random.default_rng(5))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_observation_too_long(self, rng):
        with pytest.raises(DimensionError):
            sample_posterior_case1(identity_inn(3, rng), np.zeros(3), 5, rng)


class TestCase2Sampler:
    def test_identity_map_gives_standard_normal(self, rng):
        result = sample_posterior_case2(identity_inn(3, rng), 100, np.random.default_rng(2), y=np.array([1.0]))
        np.testing.assert_array_equal(result.samples, np.random.default_rng(2).standard_normal((100, 3)))
        assert result.provenance == {"case": "case2", "checkpoint": None, "observation": [1.0]}

    def test_deterministic(self, rng, small_arch):
        tmap = build_inn_map(3, small_arch, rng)
        a = sample_posterior_case2(tmap, 10, np.random.default_rng(9))
        b = sample_posterior_case2(tmap, 10, np.random.default_rng(9))
        np.testing.assert_array_equal(a.samples, b.samples)


class TestHintSampler:
    def test_identity_map(self, rng):
        result = sample_posterior_hint(identity_hint(2, 3, rng), np.array([4.0, -4.0]), 200, np.random.default_rng(3))
        np.testing.assert_array_equal(result.samples, np.random.default_rng(3).standard_normal((200, 3)))
        assert result.dim == 3
        assert len(result) == 200

    def test_deterministic(self, rng, small_arch):
        hmap = build_hint_map(2, 2, small_arch, rng)
        a = sample_posterior_hint(hmap, np.array([0.1, 0.2]), 30, np.random.default_rng(4), checkpoint_id="abc")
        b = sample_posterior_hint(hmap, np.array([0.1, 0.2]), 30, np.random.default_rng(4))
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.provenance["checkpoint"] == "abc"
        assert a.provenance["case"] == "case3"

    def test_pooled_conditionals_match_joint_marginal(self, rng):
        """Conditioning on y drawn from the map's own joint recovers its x-marginal"""
        arch = ArchitectureConfig(n_layers=2, depth=2, hidden_layers=1, width_factor=2, init_scale=0.3)
        hmap = build_hint_map(1, 2, arch, rng)
        joint = sample_joint_from_map(hmap, 20000, rng)
        pooled = np.concatenate([sample_posterior_hint(hmap, y, 10, rng).samples for y in joint[:2000, :1]])
        np.testing.assert_allclose(pooled.mean(axis=0), joint[:, 1:].mean(axis=0), atol=0.1)
        np.testing.assert_allclose(pooled.std(axis=0), joint[:, 1:].std(axis=0), rtol=0.1)

    def test_requires_kr_map(self, rng):
        hmap = build_hint_map(1, 2, ArchitectureConfig(), rng, kr_enforced=False)
        with pytest.raises(ProblemError):
            sample_posterior_hint(hmap, np.zeros(1), 5, rng)
        with pytest.raises(ProblemError):
            sample_posterior_hint(identity_inn(3, rng), np.zeros(1), 5, rng)

    def test_observation_dimension(self, rng):
        with pytest.raises(DimensionError):
            sample_posterior_hint(identity_hint(2, 2, rng), np.zeros(3), 5, rng)


class TestPosteriorSampleSet:
    def test_moments(self):
        samples = PosteriorSampleSet(np.array([[1.0, 0.0], [-1.0, 2.0]]))
        np.testing.assert_array_equal(samples.mean(), [0.0, 1.0])
        np.testing.assert_allclose(samples.covariance(), [[2.0, -2.0], [-2.0, 2.0]])

    def test_rejects_empty(self):
        with pytest.raises(ProblemError):
            PosteriorSampleSet(np.zeros((0, 2)))
