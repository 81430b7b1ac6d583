"""Reference posteriors and error metrics: conjugate Gaussian, Kalman and bootstrap particle filters."""
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import logsumexp
from tqdm.auto import tqdm

from hint.config import settings
from hint.errors import DimensionError, OracleError
from hint.services.sequential_service import TransitionProblem

logger = logging.getLogger(__name__)

SYMMETRY_TOL = 1e-12


def _cholesky(matrix: np.ndarray, what: str):
    try:
        return cho_factor(matrix, lower=True)
    except LinAlgError as e:
        raise OracleError(f"{what} is not symmetric positive-definite") from e


@dataclass
class GaussianPosterior:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=np.float64))
        d = self.mean.shape[0]
        if self.covariance.shape != (d, d):
            raise DimensionError(f"Covariance of shape {self.covariance.shape} for a mean of dim {d}")
        scale = max(1.0, float(np.max(np.abs(self.covariance))))
        if np.max(np.abs(self.covariance - self.covariance.T)) > SYMMETRY_TOL * scale:
            raise OracleError("Covariance is not symmetric")
        _cholesky(self.covariance, "Covariance")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.covariance))


def _symmetric(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def linear_gaussian_posterior(A: np.ndarray, sigma_y: float, prior_mean: np.ndarray, prior_cov: np.ndarray, y: np.ndarray) -> GaussianPosterior:
    """Posterior of x given y = A x + sigma_y xi with x ~ N(prior_mean, prior_cov)"""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    mu0 = np.atleast_1d(np.asarray(prior_mean, dtype=np.float64))
    cov0 = np.atleast_2d(np.asarray(prior_cov, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    m, d = A.shape
    if mu0.shape != (d,) or cov0.shape != (d, d) or y.shape != (m,):
        raise DimensionError(f"Inconsistent shapes: A {A.shape}, prior mean {mu0.shape}, prior cov {cov0.shape}, y {y.shape}")
    if not sigma_y > 0:
        raise OracleError("sigma_y must be positive")
    prior_factor = _cholesky(cov0, "Prior covariance")
    prior_precision = cho_solve(prior_factor, np.eye(d))
    precision = prior_precision + A.T @ A / sigma_y ** 2
    cov = _symmetric(cho_solve(_cholesky(_symmetric(precision), "Posterior precision"), np.eye(d)))
    mean = cov @ (cho_solve(prior_factor, mu0) + A.T @ y / sigma_y ** 2)
    return GaussianPosterior(mean, cov)


def kalman_filter(
    A_dyn: np.ndarray,
    sigma_x: float,
    A_obs: np.ndarray,
    sigma_y: float,
    prior: GaussianPosterior,
    observations: Sequence[np.ndarray],
) -> List[GaussianPosterior]:
    """Filtering posteriors p(x_t | y_1..t) of a linear-Gaussian state-space model"""
    D = np.atleast_2d(np.asarray(A_dyn, dtype=np.float64))
    H = np.atleast_2d(np.asarray(A_obs, dtype=np.float64))
    d = prior.dim
    m = H.shape[0]
    if D.shape != (d, d) or H.shape[1] != d:
        raise DimensionError(f"Dynamics {D.shape} / observation {H.shape} do not match state dim {d}")
    mean, cov = prior.mean.copy(), prior.covariance.copy()
    posteriors = []
    for y in observations:
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        if y.shape != (m,):
            raise DimensionError(f"Observation of shape {y.shape}, expected ({m},)")
        # predict
        mean = D @ mean
        cov = D @ cov @ D.T + sigma_x ** 2 * np.eye(d)
        # update (Joseph form)
        S = H @ cov @ H.T + sigma_y ** 2 * np.eye(m)
        K = cho_solve(_cholesky(_symmetric(S), "Innovation covariance"), H @ cov).T
        mean = mean + K @ (y - H @ mean)
        I_KH = np.eye(d) - K @ H
        cov = _symmetric(I_KH @ cov @ I_KH.T + sigma_y ** 2 * K @ K.T)
        posteriors.append(GaussianPosterior(mean.copy(), cov.copy()))
    return posteriors


def empirical_moments(samples: np.ndarray):
    """Sample mean and unbiased covariance of an (n, d) array"""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise OracleError("empirical_moments needs at least 2 samples")
    return x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False))


def mse_trace_cov(estimated: Sequence[float], reference: float) -> float:
    est = np.asarray(estimated, dtype=np.float64)
    if est.size == 0:
        raise OracleError("mse_trace_cov needs at least one estimate")
    return float(np.mean((est - reference) ** 2))


def relative_frobenius(estimate: np.ndarray, reference: np.ndarray) -> float:
    return float(np.linalg.norm(estimate - reference) / np.linalg.norm(reference))


@dataclass
class ParticleEstimate:
    particles: np.ndarray
    mean: np.ndarray
    covariance: np.ndarray
    ess: float

    def trace(self) -> float:
        return float(np.trace(self.covariance))


def systematic_resampling(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = weights.shape[0]
    positions = (rng.random() + np.arange(n)) / n
    cumulative = np.cumsum(weights)
    cumulative[-1] = 1.0
    return np.searchsorted(cumulative, positions)


def bootstrap_filter(
    problem: TransitionProblem,
    observations: Sequence[np.ndarray],
    init_sampler: Callable[[np.random.Generator, int], np.ndarray],
    n_particles: int,
    rng: np.random.Generator,
    progress: Optional[bool] = None,
) -> List[ParticleEstimate]:
    """Predict, weight by the Gaussian likelihood, resample systematically"""
    progress = settings.PROGRESS if progress is None else progress
    if n_particles < 2:
        raise OracleError("bootstrap_filter needs at least 2 particles")
    particles = np.asarray(init_sampler(rng, n_particles), dtype=np.float64)
    estimates = []
    for y in tqdm(observations, desc="Particle filter", disable=not progress):
        y = np.atleast_1d(np.asarray(y, dtype=np.float64))
        particles = problem.propagate(particles)
        if problem.sigma_x > 0:
            particles = particles + problem.sigma_x * rng.standard_normal(particles.shape)
        if problem.clip_nonnegative:
            particles = np.maximum(particles, 0.0)
        fx = np.asarray(problem.F(particles) if problem.vectorized else np.stack([problem.F(p) for p in particles]))
        log_w = -0.5 * np.sum((fx.reshape(n_particles, -1) - y) ** 2, axis=1) / problem.sigma_y ** 2
        weights = np.exp(log_w - logsumexp(log_w))
        mean = weights @ particles
        centered = particles - mean
        cov = np.atleast_2d((weights[:, None] * centered).T @ centered)
        ess = float(1.0 / np.sum(weights ** 2))
        particles = particles[systematic_resampling(weights, rng)]
        estimates.append(ParticleEstimate(particles, mean, cov, ess))
        logger.debug(f"Particle filter step: ESS={ess:.1f} of {n_particles}")
    return estimates
