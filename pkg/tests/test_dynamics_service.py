import numpy as np
import pytest

from hint.config import ProblemConfig, problem_preset
from hint.errors import DimensionError, IntegrationError, ProblemError
from hint.services.dynamics_service import (
    ROSENBROCK_FLOOR,
    CLVParams,
    IntegratorConfig,
    Lorenz96Params,
    clv_rhs,
    linear_gaussian_problem,
    log_rosenbrock,
    log_rosenbrock_jacobian,
    lorenz96_rhs,
    make_clv_experiment,
    make_experiment,
    make_linear_gaussian_experiment,
    make_lorenz96_experiment,
    obs_select_first,
    rk4_integrate,
)
from hint.services.verification_service import numerical_jacobian


class TestCLV:
    def test_equilibrium(self):
        p = CLVParams(3, np.ones(3), np.eye(3))
        np.testing.assert_array_equal(clv_rhs(p, np.ones(3)), np.zeros(3))

    def test_scalar_arithmetic(self):
        p = CLVParams(1, np.array([2.0]), np.array([[1.0]]))
        np.testing.assert_allclose(clv_rhs(p, np.array([0.5])), [0.5])

    def test_matches_loop_evaluation(self, rng):
        d = 5
        p = CLVParams(d, rng.normal(1, 0.3, d), rng.normal(1, 0.3, (d, d)))
        u = rng.uniform(0, 2, d)
        expected = [p.r[i] * u[i] * (1.0 - sum(p.alpha[i, j] * u[j] for j in range(d))) for i in range(d)]
        np.testing.assert_allclose(clv_rhs(p, u), expected, rtol=1e-14)

    def test_batch_rows_are_independent(self, rng):
        p = CLVParams(3, rng.normal(1, 0.3, 3), rng.normal(1, 0.3, (3, 3)))
        u = rng.uniform(0, 2, (4, 3))
        batch = clv_rhs(p, u)
        for row, expected in zip(u, batch):
            np.testing.assert_allclose(clv_rhs(p, row), expected, rtol=1e-14)

    def test_shape_errors(self):
        with pytest.raises(DimensionError):
            CLVParams(2, np.ones(3), np.eye(2))
        with pytest.raises(DimensionError):
            clv_rhs(CLVParams(2, np.ones(2), np.eye(2)), np.ones(3))


class TestLorenz96:
    def test_fixed_point(self):
        p = Lorenz96Params(6, 8.0)
        np.testing.assert_allclose(lorenz96_rhs(p, np.full(6, 8.0)), np.zeros(6), atol=1e-12)

    def test_cyclic_arithmetic(self):
        du = lorenz96_rhs(Lorenz96Params(4, 8.0), np.array([1.0, 2.0, 3.0, 4.0]))
        assert du[0] == pytest.approx(3.0)

    def test_rotation_equivariance(self, rng):
        p = Lorenz96Params(7, 8.0)
        u = rng.standard_normal(7)
        np.testing.assert_allclose(lorenz96_rhs(p, np.roll(u, 2)), np.roll(lorenz96_rhs(p, u), 2), rtol=1e-14)

    def test_minimum_dimension(self):
        with pytest.raises(DimensionError):
            Lorenz96Params(3)

    def test_short_trajectory_stays_finite(self, rng):
        p = Lorenz96Params(40, 8.0)
        u = rk4_integrate(lambda x: lorenz96_rhs(p, x), rng.normal(1.0, 1e-2, 40), 0.0, 0.1, IntegratorConfig(1000))
        assert np.all(np.isfinite(u))


class TestRK4:
    def test_zero_rhs(self, rng):
        u0 = rng.standard_normal(3)
        np.testing.assert_array_equal(rk4_integrate(lambda u: np.zeros_like(u), u0, 0.0, 1.0), u0)

    def test_exponential(self):
        u = rk4_integrate(lambda u: u, np.array([1.0]), 0.0, 1.0, IntegratorConfig(100))
        assert abs(u[0] - np.e) < 1e-7

    def test_fourth_order(self):
        errors = [abs(rk4_integrate(lambda u: u, np.array([1.0]), 0.0, 1.0, IntegratorConfig(n))[0] - np.e) for n in (10, 20)]
        ratio = errors[0] / errors[1]
        assert 14.0 < ratio < 18.0
        assert np.log2(ratio) >= 3.8

    def test_blow_up_reports_time(self):
        with pytest.raises(IntegrationError) as info:
            rk4_integrate(lambda u: u ** 2, np.array([1.0]), 0.0, 2.0, IntegratorConfig(50))
        assert 0.0 < info.value.time <= 2.0

    def test_reversed_interval(self):
        with pytest.raises(ProblemError):
            rk4_integrate(lambda u: u, np.array([1.0]), 1.0, 1.0)


class TestObservationOperators:
    def test_select_all(self, rng):
        x = rng.standard_normal(4)
        np.testing.assert_array_equal(obs_select_first(4, x), x)

    def test_select_first_three(self):
        np.testing.assert_array_equal(obs_select_first(3, np.array([5.0, 6.0, 7.0, 8.0])), [5.0, 6.0, 7.0])

    @pytest.mark.parametrize("k", [0, 5])
    def test_select_out_of_range(self, k):
        with pytest.raises(DimensionError):
            obs_select_first(k, np.zeros(4))

    def test_rosenbrock_at_origin(self):
        np.testing.assert_allclose(log_rosenbrock(np.zeros(5)), np.zeros(4), atol=1e-11)

    def test_rosenbrock_value(self):
        assert log_rosenbrock(np.array([0.0, 1.0]))[0] == pytest.approx(4.61512, abs=1e-5)

    def test_rosenbrock_floor(self):
        value = log_rosenbrock(np.array([1.0, 1.0]))[0]
        assert np.isfinite(value)
        assert value == pytest.approx(np.log(ROSENBROCK_FLOOR))

    def test_rosenbrock_jacobian(self, rng):
        x = rng.standard_normal(5)
        np.testing.assert_allclose(log_rosenbrock_jacobian(x), numerical_jacobian(log_rosenbrock, x), rtol=1e-6, atol=1e-7)

    def test_rosenbrock_needs_two_coordinates(self):
        with pytest.raises(DimensionError):
            log_rosenbrock(np.zeros(1))


class TestExperiments:
    def test_clv_reproducible(self):
        cfg = problem_preset("clv")
        a = make_clv_experiment(cfg, np.random.default_rng(1))
        b = make_clv_experiment(cfg, np.random.default_rng(1))
        np.testing.assert_array_equal(a.observations, b.observations)
        assert a.observations.shape == (10, 3)
        assert a.truth.shape == (11, 4)

    def test_clv_noise_free(self, rng):
        bundle = make_clv_experiment(problem_preset("clv", n_steps=3), rng, noise_free=True)
        np.testing.assert_array_equal(bundle.observations, bundle.truth[1:, :3])
        x1 = bundle.problem.propagate(bundle.truth[:1])[0]
        np.testing.assert_array_equal(bundle.truth[1], x1)

    def test_lorenz96_dimensions(self, rng):
        bundle = make_lorenz96_experiment(problem_preset("lorenz96"), rng)
        assert bundle.problem.dim_y == 7
        assert bundle.observations.shape == (1, 7)
        full_scale = make_lorenz96_experiment(ProblemConfig(kind="lorenz96", dim_x=40, dim_y=39, n_steps=1), rng)
        assert full_scale.problem.dim_y == 39
        np.testing.assert_allclose(full_scale.times, [0.0, 0.1])

    def test_lorenz96_reproducible(self):
        cfg = problem_preset("lorenz96")
        a = make_lorenz96_experiment(cfg, np.random.default_rng(4))
        b = make_lorenz96_experiment(cfg, np.random.default_rng(4))
        np.testing.assert_array_equal(a.truth, b.truth)
        np.testing.assert_array_equal(a.observations, b.observations)

    def test_first_step_problem(self, rng):
        bundle = make_clv_experiment(problem_preset("clv", n_steps=2), rng)
        fp = bundle.first_step_problem()
        x = fp.sample_prior(rng, 50)
        assert x.shape == (50, 4)
        assert fp.prior_logpdf is None
        assert fp.dim_y == 3

    def test_linear_gaussian_problem_has_densities(self, rng):
        problem = linear_gaussian_problem(ProblemConfig(dim_x=3, dim_y=2))
        x = rng.standard_normal((4, 3))
        assert problem.prior_logpdf(x).shape == (4,)
        np.testing.assert_allclose(problem.prior_score(x), -x)

    def test_linear_gaussian_experiment(self, rng):
        bundle = make_experiment(ProblemConfig(n_steps=5), rng)
        assert bundle.kind == "linear-gaussian"
        assert bundle.observations.shape == (5, 2)
        assert bundle.truth.shape == (6, 2)

    def test_bad_matrix_shape(self, rng):
        with pytest.raises(DimensionError):
            make_linear_gaussian_experiment(ProblemConfig(dim_x=2, dim_y=2, forward_matrix=[[1.0, 0.0]]), rng)
