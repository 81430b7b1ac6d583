import numpy as np
import pytest

from hint.config import ArchitectureConfig, FilterConfig, TrainingConfig
from hint.errors import DimensionError, FilterStepError, ProblemError
from hint.services.sequential_service import FilterState, TransitionProblem, assimilate, filter_run, predict


def linear_problem(sigma_x=0.1, sigma_y=0.3):
    dyn = np.array([[0.9, 0.1], [0.0, 0.95]])
    return TransitionProblem(
        M=lambda x: x @ dyn.T,
        sigma_x=sigma_x,
        F=lambda x: x[:, :1],
        sigma_y=sigma_y,
        dim_x=2,
        dim_y=1,
        vectorized=True,
    )


def quick_setup(epochs=4, train_set_size=200):
    train_cfg = TrainingConfig(epochs=epochs, batch_size=50, train_set_size=train_set_size, learning_rate=1e-3)
    arch = ArchitectureConfig(n_layers=2, depth=2, hidden_layers=1, width_factor=2)
    filter_cfg = FilterConfig(n_particles=200, warm_fraction=0.5, track_index=1)
    return train_cfg, arch, filter_cfg


def prior(rng, n):
    return 1.0 + 0.1 * rng.standard_normal((n, 2))


class TestTransitionProblem:
    def test_rejects_bad_noise(self):
        with pytest.raises(ProblemError):
            TransitionProblem(lambda x: x, 0.1, lambda x: x, 0.0, 1, 1)
        with pytest.raises(ProblemError):
            TransitionProblem(lambda x: x, -0.1, lambda x: x, 1.0, 1, 1)

    def test_per_state_propagation(self, rng):
        problem = TransitionProblem(lambda x: 2.0 * x, 0.0, lambda x: x[:1], 1.0, 2, 1)
        x = rng.standard_normal((3, 2))
        np.testing.assert_array_equal(problem.propagate(x), 2.0 * x)

    def test_wrong_transition_shape(self, rng):
        problem = TransitionProblem(lambda x: x[:, :1], 0.0, lambda x: x, 1.0, 2, 2, vectorized=True)
        with pytest.raises(DimensionError):
            problem.propagate(np.zeros((3, 2)))

    def test_forward_problem_has_no_prior_density(self, rng):
        fp = linear_problem().forward_problem(rng.standard_normal((10, 2)))
        assert fp.prior_logpdf is None
        assert fp.sample_prior(rng, 25).shape == (25, 2)


class TestPredict:
    def test_identity_without_noise(self, rng):
        problem = TransitionProblem(lambda x: x, 0.0, lambda x: x[:, :1], 1.0, 2, 1, vectorized=True)
        samples = rng.standard_normal((50, 2))
        np.testing.assert_array_equal(predict(FilterState(0, samples), problem, rng), samples)

    def test_point_mass_moments(self, rng):
        problem = linear_problem(sigma_x=0.2)
        x0 = np.array([1.0, -2.0])
        out = predict(FilterState(0, np.tile(x0, (100000, 1))), problem, rng)
        np.testing.assert_allclose(out.mean(axis=0), problem.M(x0[None, :])[0], atol=0.005)
        np.testing.assert_allclose(np.cov(out, rowvar=False), 0.04 * np.eye(2), rtol=0.05, atol=0.002)

    def test_deterministic_and_size_preserving(self):
        problem = linear_problem()
        samples = np.random.default_rng(0).standard_normal((40, 2))
        a = predict(FilterState(0, samples), problem, np.random.default_rng(8))
        b = predict(FilterState(0, samples), problem, np.random.default_rng(8))
        np.testing.assert_array_equal(a, b)
        assert a.shape == samples.shape

    def test_clip_nonnegative(self, rng):
        problem = TransitionProblem(lambda x: x, 1.0, lambda x: x, 1.0, 2, 2, vectorized=True, clip_nonnegative=True)
        out = predict(FilterState(0, np.zeros((500, 2))), problem, rng)
        assert np.all(out >= 0.0)

    def test_rejects_empty_ensemble(self, rng):
        with pytest.raises(ProblemError):
            predict(FilterState(0, np.zeros((0, 2))), linear_problem(), rng)


class TestAssimilate:
    def test_first_step_builds_map_and_records_metrics(self, rng):
        train_cfg, arch, filter_cfg = quick_setup()
        state = assimilate(FilterState(0, prior(rng, 200)), linear_problem(), np.array([0.9]), train_cfg, rng, arch, filter_cfg)
        assert state.t == 1
        assert state.map is not None
        assert state.posterior_samples.shape == (200, 2)
        record = state.metrics[-1]
        assert record["step"] == 1
        assert record["epochs"] == 4
        assert record["f_evaluations"] == 200
        assert {"mean_0", "mean_1", "cov_trace", "tracked_mean", "tracked_std"} <= set(record)
        assert np.isfinite(record["final_loss"])
        assert record["identity_loss"] > 0

    def test_warm_start_copies_map(self, rng):
        train_cfg, arch, filter_cfg = quick_setup()
        problem = linear_problem()
        first = assimilate(FilterState(0, prior(rng, 200)), problem, np.array([0.9]), train_cfg, rng, arch, filter_cfg)
        before = [p.copy() for p in first.map.parameters()]
        second = assimilate(first, problem, np.array([0.8]), train_cfg, rng, arch, filter_cfg)
        assert second.map is not first.map
        assert second.metrics[-1]["epochs"] == 2
        assert len(second.metrics) == 2
        for p, q in zip(first.map.parameters(), before):
            np.testing.assert_array_equal(p, q)

    def test_training_pool_tops_up_small_ensembles(self, rng):
        train_cfg, arch, filter_cfg = quick_setup(train_set_size=500)
        state = assimilate(FilterState(0, prior(rng, 200)), linear_problem(), np.array([0.9]), train_cfg, rng, arch, filter_cfg)
        assert state.metrics[-1]["f_evaluations"] == 500

    def test_case1_path(self, rng):
        train_cfg, arch, filter_cfg = quick_setup()
        filter_cfg.case = "case1"
        state = assimilate(FilterState(0, prior(rng, 200)), linear_problem(), np.array([0.9]), train_cfg, rng, arch, filter_cfg)
        assert state.posterior_samples.shape == (200, 2)
        assert state.map.dim == 2

    def test_observation_dimension(self, rng):
        train_cfg, arch, filter_cfg = quick_setup()
        with pytest.raises(DimensionError):
            assimilate(FilterState(0, prior(rng, 200)), linear_problem(), np.zeros(2), train_cfg, rng, arch, filter_cfg)


class TestFilterRun:
    def test_single_observation(self, rng):
        train_cfg, arch, filter_cfg = quick_setup()
        states = filter_run(linear_problem(), np.array([[0.9]]), prior, train_cfg, rng, arch, filter_cfg, progress=False)
        assert len(states) == 1
        assert states[0].t == 1

    def test_deterministic(self):
        runs = []
        for _ in range(2):
            train_cfg, arch, filter_cfg = quick_setup(epochs=2)
            states = filter_run(linear_problem(), np.array([0.9, 0.8]), prior, train_cfg, np.random.default_rng(21), arch, filter_cfg, progress=False)
            runs.append(np.concatenate([s.posterior_samples for s in states]))
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_empty_observations(self, rng):
        train_cfg, arch, filter_cfg = quick_setup()
        with pytest.raises(ProblemError):
            filter_run(linear_problem(), np.zeros((0, 1)), prior, train_cfg, rng, arch, filter_cfg, progress=False)

    def test_failures_carry_step(self, rng):
        train_cfg, arch, filter_cfg = quick_setup()
        broken = TransitionProblem(lambda x: x[:, :1], 0.1, lambda x: x[:, :1], 0.3, 2, 1, vectorized=True)
        with pytest.raises(FilterStepError) as info:
            filter_run(broken, np.array([[0.9]]), prior, train_cfg, rng, arch, filter_cfg, progress=False)
        assert info.value.step == 1

    def test_track_index_range(self, rng):
        train_cfg, arch, filter_cfg = quick_setup()
        filter_cfg.track_index = 5
        with pytest.raises(DimensionError):
            filter_run(linear_problem(), np.array([[0.9]]), prior, train_cfg, rng, arch, filter_cfg, progress=False)
