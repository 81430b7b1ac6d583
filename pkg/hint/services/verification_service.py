"""Invariant checks run by `hint verify`, plus the finite-difference helpers they rely on."""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Sequence

import numpy as np

from hint.config import ArchitectureConfig
from hint.services.coupling_service import build_inn_map
from hint.services.hint_service import build_hint_map, marginal_forward_y
from hint.services.mlp_service import GradientBuffer, mlp_backward, mlp_forward, mlp_init
from hint.services.numerics_service import mobius_forward, mobius_inverse, mobius_vjp, random_mobius
from hint.services.transport_service import loss_case3

logger = logging.getLogger(__name__)


def numerical_jacobian(fun: Callable[[np.ndarray], np.ndarray], u: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of fun at a single point u"""
    u = np.asarray(u, dtype=np.float64)
    columns = []
    for j in range(u.shape[0]):
        step = np.zeros_like(u)
        step[j] = h
        columns.append((np.asarray(fun(u + step)) - np.asarray(fun(u - step))) / (2.0 * h))
    return np.stack(columns, axis=1)


def directional_gradient_error(
    loss_fn: Callable[[], float], params: Sequence[np.ndarray], grads: GradientBuffer, rng: np.random.Generator, h: float = 1e-6
) -> float:
    """Relative gap between grads . delta and the central difference of loss_fn along delta"""
    directions = [rng.standard_normal(p.shape) for p in params]
    analytic = float(sum(np.sum(g * dv) for g, dv in zip(grads.arrays, directions)))
    originals = [p.copy() for p in params]

    def shifted(sign: float) -> float:
        for p, base, dv in zip(params, originals, directions):
            p[...] = base + sign * h * dv
        return loss_fn()

    try:
        numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * h)
    finally:
        for p, base in zip(params, originals):
            p[...] = base
    return abs(numeric - analytic) / max(abs(analytic), abs(numeric), 1e-8)


@dataclass
class CheckResult:
    name: str
    value: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tolerance)


@dataclass
class VerificationReport:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def rows(self) -> List[dict]:
        return [{"check": c.name, "value": c.value, "tolerance": c.tolerance, "passed": c.passed} for c in self.checks]


def _random_arch(rng: np.random.Generator, **overrides) -> ArchitectureConfig:
    values = dict(n_layers=int(rng.integers(1, 5)), depth=int(rng.integers(1, 4)), hidden_layers=1, width_factor=2, init_scale=0.3)
    values.update(overrides)
    return ArchitectureConfig(**values)


def check_invertibility(rng: np.random.Generator, cases: int = 10, points: int = 200) -> float:
    worst = 0.0
    for k in range(cases):
        if k % 2 == 0:
            dim = int(rng.integers(2, 17))
            tmap = build_inn_map(dim, _random_arch(rng), rng)
        else:
            m = int(rng.integers(1, 8))
            d = int(rng.integers(1, 9))
            tmap = build_hint_map(m, d, _random_arch(rng), rng)
        u = rng.standard_normal((points, tmap.dim))
        v, _, _ = tmap.forward(u)
        worst = max(worst, float(np.max(np.abs(tmap.inverse(v) - u))))
    return worst


def check_logdet(rng: np.random.Generator, cases: int = 10) -> float:
    worst = 0.0
    for k in range(cases):
        if k % 2 == 0:
            tmap = build_inn_map(int(rng.integers(2, 9)), _random_arch(rng, hidden_layers=1), rng)
        else:
            tmap = build_hint_map(int(rng.integers(1, 5)), int(rng.integers(1, 5)), _random_arch(rng, hidden_layers=1), rng)
        u = 0.5 * rng.standard_normal(tmap.dim)
        _, logdet, _ = tmap.forward(u)
        jac = numerical_jacobian(lambda x: tmap.forward(x)[0], u)
        _, numeric = np.linalg.slogdet(jac)
        worst = max(worst, abs(logdet - numeric) / max(1.0, abs(numeric)))
    return worst


def check_kr_structure(rng: np.random.Generator, cases: int = 5) -> float:
    """Largest change of the y-block under x perturbations, and of marginal vs full forward"""
    worst = 0.0
    for _ in range(cases):
        m, d = int(rng.integers(1, 5)), int(rng.integers(1, 6))
        hmap = build_hint_map(m, d, _random_arch(rng), rng)
        w = rng.standard_normal((50, m + d))
        z, _, _ = hmap.forward(w)
        shifted = w.copy()
        shifted[:, m:] += rng.standard_normal((50, d))
        z_shifted, _, _ = hmap.forward(shifted)
        worst = max(worst, float(np.max(np.abs(z_shifted[:, :m] - z[:, :m]))))
        worst = max(worst, float(np.max(np.abs(marginal_forward_y(hmap, w[:, :m]) - z[:, :m]))))
    return worst


def mobius_jacobian(params, u: np.ndarray) -> np.ndarray:
    """Exact Jacobian from vector-Jacobian products with the basis vectors"""
    eye = np.eye(params.dim)
    rows = [mobius_vjp(params, u[None, :], e[None, :], np.zeros(1))[0] for e in eye]
    return np.stack(rows)


def check_mobius(rng: np.random.Generator, points: int = 20):
    """(worst conformality error, worst round-trip error) over gamma in {0, 2}"""
    conformal, round_trip = 0.0, 0.0
    for gamma in (0, 2):
        dim = int(rng.integers(2, 7))
        params = random_mobius(dim, gamma, dim, rng)
        for _ in range(points):
            u = rng.standard_normal(dim)
            jac = mobius_jacobian(params, u)
            _, logdet = mobius_forward(params, u)
            scale = np.exp(2.0 * logdet / dim)
            conformal = max(conformal, float(np.max(np.abs(jac @ jac.T - scale * np.eye(dim))) / scale))
            v, _ = mobius_forward(params, u)
            round_trip = max(round_trip, float(np.max(np.abs(mobius_inverse(params, v) - u))))
    return conformal, round_trip


def check_mlp_gradients(rng: np.random.Generator, cases: int = 5) -> float:
    worst = 0.0
    for _ in range(cases):
        widths = [int(rng.integers(1, 5)), int(rng.integers(2, 8)), int(rng.integers(1, 5))]
        net = mlp_init(widths, 0.01, 2.0 if rng.random() < 0.5 else None, rng)
        x = rng.standard_normal((8, widths[0]))
        upstream = rng.standard_normal((8, widths[-1]))
        out, cache = mlp_forward(net, x)
        _, grads = mlp_backward(net, cache, upstream)
        worst = max(worst, directional_gradient_error(lambda: float(np.sum(mlp_forward(net, x)[0] * upstream)), net.parameters(), grads, rng))
    return worst


def check_loss_gradients(rng: np.random.Generator, cases: int = 5) -> float:
    worst = 0.0
    for _ in range(cases):
        m, d = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        hmap = build_hint_map(m, d, _random_arch(rng, n_layers=2, depth=2), rng)
        w = rng.standard_normal((16, m + d))
        _, grads = loss_case3(hmap, w)
        worst = max(worst, directional_gradient_error(lambda: loss_case3(hmap, w)[0], hmap.parameters(), grads, rng))
    return worst


def run_verification(rng: np.random.Generator) -> VerificationReport:
    report = VerificationReport()
    report.checks.append(CheckResult("invertibility", check_invertibility(rng), 1e-9))
    report.checks.append(CheckResult("logdet", check_logdet(rng), 1e-5))
    report.checks.append(CheckResult("kr_structure", check_kr_structure(rng), 1e-12))
    conformal, round_trip = check_mobius(rng)
    report.checks.append(CheckResult("mobius_conformality", conformal, 1e-5))
    report.checks.append(CheckResult("mobius_round_trip", round_trip, 1e-10))
    report.checks.append(CheckResult("mlp_gradients", check_mlp_gradients(rng), 1e-4))
    report.checks.append(CheckResult("loss_gradients", check_loss_gradients(rng), 1e-4))
    for check in report.checks:
        log = logger.info if check.passed else logger.error
        log(f"Check {check.name}: {check.value:.3e} (tolerance {check.tolerance:.0e}) {'ok' if check.passed else 'FAILED'}")
    return report
