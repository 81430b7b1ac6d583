import numpy as np

from hint.services.verification_service import (
    CheckResult,
    VerificationReport,
    check_invertibility,
    check_kr_structure,
    check_logdet,
    check_loss_gradients,
    check_mlp_gradients,
    check_mobius,
    directional_gradient_error,
    numerical_jacobian,
    run_verification,
)
from hint.services.mlp_service import GradientBuffer


class TestHelpers:
    def test_numerical_jacobian_of_linear_map(self, rng):
        A = rng.standard_normal((3, 4))
        np.testing.assert_allclose(numerical_jacobian(lambda u: A @ u, rng.standard_normal(4)), A, atol=1e-9)

    def test_directional_error_detects_wrong_gradient(self, rng):
        p = [rng.standard_normal(3)]

        def loss():
            return float(np.sum(p[0] ** 2))

        good = GradientBuffer([2.0 * p[0]])
        bad = GradientBuffer([p[0].copy()])
        assert directional_gradient_error(loss, p, good, rng) < 1e-8
        assert directional_gradient_error(loss, p, bad, rng) > 0.1

    def test_parameters_restored(self, rng):
        p = [rng.standard_normal(2)]
        before = p[0].copy()
        directional_gradient_error(lambda: float(p[0].sum()), p, GradientBuffer([np.ones(2)]), rng)
        np.testing.assert_array_equal(p[0], before)


class TestChecks:
    def test_invertibility(self, rng):
        assert check_invertibility(rng, cases=4, points=50) < 1e-9

    def test_logdet(self, rng):
        assert check_logdet(rng, cases=4) < 1e-5

    def test_kr_structure(self, rng):
        assert check_kr_structure(rng, cases=3) <= 1e-12

    def test_mobius(self, rng):
        conformal, round_trip = check_mobius(rng, points=5)
        assert conformal < 1e-5
        assert round_trip < 1e-10

    def test_gradients(self, rng):
        assert check_mlp_gradients(rng, cases=3) < 1e-4
        assert check_loss_gradients(rng, cases=2) < 1e-4


class TestReport:
    def test_non_finite_value_fails(self):
        assert not CheckResult("x", float("nan"), 1.0).passed
        assert CheckResult("x", 0.5, 1.0).passed

    def test_report_rows(self):
        report = VerificationReport([CheckResult("a", 0.0, 1.0), CheckResult("b", 2.0, 1.0)])
        assert not report.passed
        assert [row["passed"] for row in report.rows()] == [True, False]

    def test_full_suite_passes(self, rng):
        report = run_verification(rng)
        assert report.passed, report.rows()
