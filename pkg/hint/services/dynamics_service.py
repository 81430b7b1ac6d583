"""Benchmark dynamical systems, observation operators and a fixed-step RK4 integrator."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np
from scipy.stats import multivariate_normal

from hint.config import ProblemConfig
from hint.errors import DimensionError, IntegrationError, ProblemError
from hint.services.sequential_service import TransitionProblem
from hint.services.transport_service import ForwardProblem

logger = logging.getLogger(__name__)

ROSENBROCK_FLOOR = 1e-12


@dataclass
class CLVParams:
    d: int
    r: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.d < 1:
            raise DimensionError("CLV needs d >= 1")
        if self.r.shape != (self.d,) or self.alpha.shape != (self.d, self.d):
            raise DimensionError(f"CLV r {self.r.shape} / alpha {self.alpha.shape} do not match d={self.d}")


@dataclass
class Lorenz96Params:
    d: int
    alpha: float = 8.0

    def __post_init__(self):
        if self.d < 4:
            raise DimensionError(f"Lorenz96 needs d >= 4, got {self.d}")


@dataclass
class IntegratorConfig:
    steps_per_unit_time: int = 100

    def __post_init__(self):
        if self.steps_per_unit_time < 1:
            raise ProblemError("steps_per_unit_time must be >= 1")


def _state(u: np.ndarray, d: int) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if u.shape[-1] != d:
        raise DimensionError(f"State has shape {u.shape}, expected (..., {d})")
    return u


def clv_rhs(p: CLVParams, u: np.ndarray) -> np.ndarray:
    """du_i = r_i u_i (1 - sum_j alpha_ij u_j); rows of a batch are independent states"""
    u = _state(u, p.d)
    return p.r * u * (1.0 - u @ p.alpha.T)


def lorenz96_rhs(p: Lorenz96Params, u: np.ndarray) -> np.ndarray:
    """du_i = (u_{i+1} - u_{i-2}) u_{i-1} - u_i + alpha, indices cyclic"""
    u = _state(u, p.d)
    return (np.roll(u, -1, axis=-1) - np.roll(u, 2, axis=-1)) * np.roll(u, 1, axis=-1) - u + p.alpha


def rk4_integrate(rhs: Callable[[np.ndarray], np.ndarray], u0: np.ndarray, t0: float, t1: float, cfg: Optional[IntegratorConfig] = None) -> np.ndarray:
    """Classical RK4 with round((t1 - t0) * steps_per_unit_time) equal steps (at least one)"""
    cfg = cfg or IntegratorConfig()
    if not t1 > t0:
        raise ProblemError(f"rk4_integrate needs t1 > t0, got [{t0}, {t1}]")
    steps = max(1, int(round((t1 - t0) * cfg.steps_per_unit_time)))
    h = (t1 - t0) / steps
    u = np.array(u0, dtype=np.float64)
    t = t0
    for _ in range(steps):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * h * k1)
        k3 = rhs(u + 0.5 * h * k2)
        k4 = rhs(u + h * k3)
        u = u + h * (k1 + 2.0 * (k2 + k3) + k4) / 6.0
        t += h
        if not np.all(np.isfinite(u)):
            raise IntegrationError("ODE state became non-finite", t)
    return u


def obs_select_first(k: int, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if k < 1 or k > x.shape[-1]:
        raise DimensionError(f"Cannot select the first {k} of {x.shape[-1]} coordinates")
    return x[..., :k].copy()


def log_rosenbrock(x: np.ndarray) -> np.ndarray:
    """F_i(x) = log(100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2 + eps), i = 1..d-1"""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise DimensionError("log_rosenbrock needs d >= 2")
    head, tail = x[..., :-1], x[..., 1:]
    return np.log(100.0 * (tail - head ** 2) ** 2 + (1.0 - head) ** 2 + ROSENBROCK_FLOOR)


def log_rosenbrock_jacobian(x: np.ndarray) -> np.ndarray:
    """(d-1, d) Jacobian of log_rosenbrock at a single state"""
    x = np.asarray(x, dtype=np.float64)
    head, tail = x[:-1], x[1:]
    gap = tail - head ** 2
    q = 100.0 * gap ** 2 + (1.0 - head) ** 2 + ROSENBROCK_FLOOR
    d = x.shape[0]
    jac = np.zeros((d - 1, d))
    idx = np.arange(d - 1)
    jac[idx, idx] = (-400.0 * gap * head - 2.0 * (1.0 - head)) / q
    jac[idx, idx + 1] = 200.0 * gap / q
    return jac


@dataclass
class ExperimentBundle:
    """A seeded experiment: transition problem, truth trajectory and observations.

    truth[0] is the initial state; truth[j] and observations[j - 1] belong to times[j].
    """

    kind: str
    problem: TransitionProblem
    truth: np.ndarray
    observations: np.ndarray
    times: np.ndarray
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    params: Dict = field(default_factory=dict)

    def init_prior_sampler(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.multivariate_normal(self.prior_mean, self.prior_cov, size=n)

    def first_step_problem(self) -> ForwardProblem:
        """Static problem of the first assimilation: prior = predicted initial ensemble"""
        tp = self.problem

        def predicted_prior(rng, n):
            x0 = self.init_prior_sampler(rng, n)
            mean = tp.propagate(x0)
            x = mean + tp.sigma_x * rng.standard_normal(mean.shape) if tp.sigma_x > 0 else mean
            return np.maximum(x, 0.0) if tp.clip_nonnegative else x

        return ForwardProblem(predicted_prior, tp.F, tp.sigma_y, tp.dim_x, tp.dim_y, F_grad=tp.F_grad, vectorized=tp.vectorized)


def _simulate(problem: TransitionProblem, x0: np.ndarray, n_steps: int, rng: np.random.Generator, noise_free: bool):
    truth = [x0]
    observations = []
    for _ in range(n_steps):
        x = problem.propagate(truth[-1][None, :])[0]
        if not noise_free:
            x = x + problem.sigma_x * rng.standard_normal(problem.dim_x)
            if problem.clip_nonnegative:
                x = np.maximum(x, 0.0)
        truth.append(x)
        y = np.asarray(problem.F(x[None, :]) if problem.vectorized else problem.F(x), dtype=np.float64).reshape(problem.dim_y)
        if not noise_free:
            y = y + problem.sigma_y * rng.standard_normal(problem.dim_y)
        observations.append(y)
    return np.array(truth), np.array(observations)


def make_clv_experiment(cfg: ProblemConfig, rng: np.random.Generator, noise_free: Optional[bool] = None) -> ExperimentBundle:
    """Competitive Lotka-Volterra with r, alpha ~ N(1, 0.3^2), first dim_y species observed"""
    d, m = cfg.dim_x, cfg.dim_y
    noise_free = cfg.noise_free if noise_free is None else noise_free
    interval = cfg.obs_interval or 1.0
    params = CLVParams(d, rng.normal(1.0, 0.3, size=d), rng.normal(1.0, 0.3, size=(d, d)))
    integ = IntegratorConfig(cfg.steps_per_unit_time)

    def transition(x):
        return rk4_integrate(lambda u: clv_rhs(params, u), x, 0.0, interval, integ)

    problem = TransitionProblem(
        M=transition,
        sigma_x=cfg.sigma_x,
        F=lambda x: obs_select_first(m, x),
        sigma_y=cfg.sigma_y,
        dim_x=d,
        dim_y=m,
        vectorized=True,
        F_grad=lambda x: np.eye(m, d),
        clip_nonnegative=cfg.clip_nonnegative,
    )
    x0 = rng.normal(1.0, 1e-2, size=d)
    truth, observations = _simulate(problem, x0, cfg.n_steps, rng, noise_free)
    logger.info(f"Generated CLV experiment: d={d}, m={m}, {cfg.n_steps} observations, noise_free={noise_free}")
    return ExperimentBundle(
        kind="clv",
        problem=problem,
        truth=truth,
        observations=observations,
        times=interval * np.arange(cfg.n_steps + 1),
        prior_mean=np.ones(d),
        prior_cov=1e-2 * np.eye(d),
        params={"r": params.r.tolist(), "alpha": params.alpha.tolist(), "obs_interval": interval},
    )


def make_lorenz96_experiment(cfg: ProblemConfig, rng: np.random.Generator, noise_free: Optional[bool] = None) -> ExperimentBundle:
    """Lorenz96 observed through the log-Rosenbrock map (m = d - 1)"""
    d = cfg.dim_x
    noise_free = cfg.noise_free if noise_free is None else noise_free
    interval = cfg.obs_interval or 0.1
    params = Lorenz96Params(d, cfg.forcing)
    integ = IntegratorConfig(cfg.steps_per_unit_time)

    def transition(x):
        return rk4_integrate(lambda u: lorenz96_rhs(params, u), x, 0.0, interval, integ)

    problem = TransitionProblem(
        M=transition,
        sigma_x=cfg.sigma_x,
        F=log_rosenbrock,
        sigma_y=cfg.sigma_y,
        dim_x=d,
        dim_y=d - 1,
        vectorized=True,
        F_grad=log_rosenbrock_jacobian,
    )
    x0 = rng.normal(1.0, 1e-2, size=d)
    truth, observations = _simulate(problem, x0, cfg.n_steps, rng, noise_free)
    logger.info(f"Generated Lorenz96 experiment: d={d}, m={d - 1}, {cfg.n_steps} observations, noise_free={noise_free}")
    return ExperimentBundle(
        kind="lorenz96",
        problem=problem,
        truth=truth,
        observations=observations,
        times=interval * np.arange(cfg.n_steps + 1),
        prior_mean=np.ones(d),
        prior_cov=np.eye(d),
        params={"forcing": params.alpha, "obs_interval": interval},
    )


# Linear-Gaussian systems, used with the closed-form oracles


def _matrix(value, default: np.ndarray, shape, name: str) -> np.ndarray:
    mat = default if value is None else np.asarray(value, dtype=np.float64)
    if mat.shape != shape:
        raise DimensionError(f"{name} has shape {mat.shape}, expected {shape}")
    return mat


def linear_gaussian_setup(cfg: ProblemConfig):
    """(A, prior_mean, prior_cov, dynamics matrix) with documented defaults"""
    d, m = cfg.dim_x, cfg.dim_y
    A = _matrix(cfg.forward_matrix, np.eye(m, d) + 0.5 * np.eye(m, d, k=1), (m, d), "problem.forward_matrix")
    mu0 = _matrix(cfg.prior_mean, np.zeros(d), (d,), "problem.prior_mean")
    cov0 = _matrix(cfg.prior_cov, np.eye(d), (d, d), "problem.prior_cov")
    dyn = _matrix(cfg.dynamics_matrix, 0.95 * np.eye(d), (d, d), "problem.dynamics_matrix")
    return A, mu0, cov0, dyn


def linear_gaussian_problem(cfg: ProblemConfig) -> ForwardProblem:
    """y = A x + sigma_y xi with x ~ N(mu0, cov0); densities and gradients are analytic"""
    A, mu0, cov0, _ = linear_gaussian_setup(cfg)
    prior = multivariate_normal(mean=mu0, cov=cov0)
    precision = np.linalg.inv(cov0)
    return ForwardProblem(
        prior_sampler=lambda rng, n: rng.multivariate_normal(mu0, cov0, size=n),
        F=lambda x: x @ A.T,
        sigma_y=cfg.sigma_y,
        dim_x=cfg.dim_x,
        dim_y=cfg.dim_y,
        prior_logpdf=lambda x: np.atleast_1d(prior.logpdf(x)),
        prior_logpdf_grad=lambda x: -(x - mu0) @ precision,
        F_grad=lambda x: A,
        vectorized=True,
    )


def make_linear_gaussian_experiment(cfg: ProblemConfig, rng: np.random.Generator, noise_free: Optional[bool] = None) -> ExperimentBundle:
    """Linear dynamics x_t = D x_{t-1} + sigma_x eta observed through A"""
    A, mu0, cov0, dyn = linear_gaussian_setup(cfg)
    noise_free = cfg.noise_free if noise_free is None else noise_free
    problem = TransitionProblem(
        M=lambda x: x @ dyn.T,
        sigma_x=cfg.sigma_x,
        F=lambda x: x @ A.T,
        sigma_y=cfg.sigma_y,
        dim_x=cfg.dim_x,
        dim_y=cfg.dim_y,
        vectorized=True,
        F_grad=lambda x: A,
    )
    x0 = rng.multivariate_normal(mu0, cov0)
    truth, observations = _simulate(problem, x0, cfg.n_steps, rng, noise_free)
    return ExperimentBundle(
        kind="linear-gaussian",
        problem=problem,
        truth=truth,
        observations=observations,
        times=np.arange(cfg.n_steps + 1, dtype=np.float64),
        prior_mean=mu0,
        prior_cov=cov0,
        params={"forward_matrix": A.tolist(), "dynamics_matrix": dyn.tolist()},
    )


def make_experiment(cfg: ProblemConfig, rng: np.random.Generator) -> ExperimentBundle:
    builders = {
        "clv": make_clv_experiment,
        "lorenz96": make_lorenz96_experiment,
        "linear-gaussian": make_linear_gaussian_experiment,
    }
    return builders[cfg.kind](cfg, rng)
