"""Sequential inference: prediction through the dynamics, then assimilation by retraining."""
import copy
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from tqdm.auto import tqdm

from hint.config import ArchitectureConfig, FilterConfig, TrainingConfig, settings
from hint.errors import DimensionError, FilterStepError, ProblemError
from hint.services.coupling_service import build_inn_map
from hint.services.hint_service import build_hint_map
from hint.services.posterior_service import sample_posterior_case1, sample_posterior_hint
from hint.services.transport_service import ForwardProblem, LossSpec, train

logger = logging.getLogger(__name__)


@dataclass
class TransitionProblem:
    """x_t = M(x_{t-1}) + sigma_x eta,  y_t = F(x_t) + sigma_y xi.

    With `vectorized`, M maps (n, d) to (n, d) and F maps (n, d) to (n, m);
    otherwise both act on one state at a time.
    """

    M: Callable[[np.ndarray], np.ndarray]
    sigma_x: float
    F: Callable[[np.ndarray], np.ndarray]
    sigma_y: float
    dim_x: int
    dim_y: int
    vectorized: bool = False
    F_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    clip_nonnegative: bool = False

    def __post_init__(self):
        if not self.sigma_y > 0:
            raise ProblemError(f"sigma_y must be positive, got {self.sigma_y}")
        if self.sigma_x < 0:
            raise ProblemError(f"sigma_x must be >= 0, got {self.sigma_x}")

    def propagate(self, x: np.ndarray) -> np.ndarray:
        """Noise-free transition M applied to every row"""
        x = np.asarray(x, dtype=np.float64)
        if self.vectorized:
            out = np.asarray(self.M(x), dtype=np.float64)
        else:
            out = np.stack([np.asarray(self.M(xi), dtype=np.float64) for xi in x])
        if out.shape != x.shape:
            raise DimensionError(f"M returned shape {out.shape}, expected {x.shape}")
        return out

    def forward_problem(self, samples: np.ndarray) -> ForwardProblem:
        """Observation model over an empirical prior; no prior density is attached"""

        def resample(rng, n):
            return samples[rng.integers(0, samples.shape[0], size=n)]

        return ForwardProblem(
            prior_sampler=resample,
            F=self.F,
            sigma_y=self.sigma_y,
            dim_x=self.dim_x,
            dim_y=self.dim_y,
            F_grad=self.F_grad,
            vectorized=self.vectorized,
        )


@dataclass
class FilterState:
    t: int
    posterior_samples: np.ndarray
    map: Optional[object] = None
    metrics: List[Dict] = field(default_factory=list)

    @property
    def map_params(self) -> List[np.ndarray]:
        return [] if self.map is None else self.map.parameters()


def _transition_noise(problem: TransitionProblem, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    x = mean
    if problem.sigma_x > 0:
        x = mean + problem.sigma_x * rng.standard_normal(mean.shape)
    if problem.clip_nonnegative:
        x = np.maximum(x, 0.0)
    return x


def predict(state: FilterState, problem: TransitionProblem, rng: np.random.Generator) -> np.ndarray:
    """Push every posterior sample through the transition density"""
    samples = np.asarray(state.posterior_samples, dtype=np.float64)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ProblemError("predict needs a nonempty (n, d) posterior sample set")
    return _transition_noise(problem, problem.propagate(samples), rng)


def _training_pool(state: FilterState, problem: TransitionProblem, predicted: np.ndarray, size: int, rng) -> np.ndarray:
    if size <= predicted.shape[0]:
        return predicted[:size]
    extra = size - predicted.shape[0]
    parents = state.posterior_samples[rng.integers(0, state.posterior_samples.shape[0], size=extra)]
    topup = _transition_noise(problem, problem.propagate(parents), rng)
    return np.concatenate([predicted, topup], axis=0)


def assimilate(
    state: FilterState,
    problem: TransitionProblem,
    y_t: np.ndarray,
    train_cfg: TrainingConfig,
    rng: np.random.Generator,
    arch: Optional[ArchitectureConfig] = None,
    filter_cfg: Optional[FilterConfig] = None,
    predicted: Optional[np.ndarray] = None,
    callback: Optional[Callable[[int, float, object], None]] = None,
    progress: Optional[bool] = None,
) -> FilterState:
    """Condition the predicted ensemble on y_t and return the next filter state.

    The first step builds a fresh map; later steps deep-copy the previous map
    (warm start), reset the optimizer and train for warm_fraction of the epochs.
    """
    arch = arch or ArchitectureConfig()
    filter_cfg = filter_cfg or FilterConfig()
    case = filter_cfg.case
    start = time.time()
    y_t = np.atleast_1d(np.asarray(y_t, dtype=np.float64))
    if y_t.shape != (problem.dim_y,):
        raise DimensionError(f"Observation has shape {y_t.shape}, expected ({problem.dim_y},)")

    if predicted is None:
        predicted = predict(state, problem, rng)
    pool = _training_pool(state, problem, predicted, train_cfg.train_set_size, rng)
    fp = problem.forward_problem(pool)

    if state.map is None:
        if case == "case1":
            tmap = build_inn_map(problem.dim_x, arch, rng)
        else:
            tmap = build_hint_map(problem.dim_y, problem.dim_x, arch, rng)
        epochs = train_cfg.epochs
    else:
        tmap = copy.deepcopy(state.map)
        epochs = max(1, int(round(filter_cfg.warm_fraction * train_cfg.epochs)))

    if case == "case1":
        spec = LossSpec("case1", train_cfg.batch_size, anneal=train_cfg.anneal)
        data = pool
    else:
        spec = LossSpec("sequential", train_cfg.batch_size)
        y_pool = fp.forward_batch(pool) + problem.sigma_y * rng.standard_normal((pool.shape[0], problem.dim_y))
        data = np.concatenate([y_pool, pool], axis=1)

    report = train(tmap, spec, fp, epochs, pool.shape[0], rng, config=train_cfg, training_set=data, callback=callback, progress=progress)

    n_out = filter_cfg.n_particles
    if case == "case1":
        sample_set = sample_posterior_case1(tmap, y_t, n_out, rng)
    else:
        sample_set = sample_posterior_hint(tmap, y_t, n_out, rng)

    samples = sample_set.samples
    cov = np.atleast_2d(np.cov(samples, rowvar=False))
    record = {
        "step": state.t + 1,
        "epochs": epochs,
        "final_loss": report.final_loss,
        "identity_loss": report.identity_loss,
        "cov_trace": float(np.trace(cov)),
        "wall_time": time.time() - start,
        "f_evaluations": fp.f_evaluations,
    }
    for i, value in enumerate(samples.mean(axis=0)):
        record[f"mean_{i}"] = float(value)
    if filter_cfg.track_index is not None:
        k = filter_cfg.track_index
        record["tracked_mean"] = float(samples[:, k].mean())
        record["tracked_std"] = float(samples[:, k].std(ddof=1))
    logger.info(f"Assimilated step {record['step']}: epochs={epochs}, cov_trace={record['cov_trace']:.4g}, loss={report.final_loss}")
    return FilterState(state.t + 1, samples, tmap, state.metrics + [record])


def filter_run(
    problem: TransitionProblem,
    observations: np.ndarray,
    init_prior_sampler: Callable[[np.random.Generator, int], np.ndarray],
    train_cfg: TrainingConfig,
    rng: np.random.Generator,
    arch: Optional[ArchitectureConfig] = None,
    filter_cfg: Optional[FilterConfig] = None,
    progress: Optional[bool] = None,
) -> List[FilterState]:
    """Alternate predict / assimilate over all observations; one state per step"""
    filter_cfg = filter_cfg or FilterConfig()
    progress = settings.PROGRESS if progress is None else progress
    observations = np.asarray(observations, dtype=np.float64)
    if observations.ndim == 1:
        observations = observations[:, None] if problem.dim_y == 1 else observations[None, :]
    if observations.shape[0] == 0:
        raise ProblemError("filter_run needs at least one observation")
    if filter_cfg.track_index is not None and not 0 <= filter_cfg.track_index < problem.dim_x:
        raise DimensionError(f"track_index {filter_cfg.track_index} outside 0..{problem.dim_x - 1}")

    init = np.asarray(init_prior_sampler(rng, filter_cfg.n_particles), dtype=np.float64)
    state = FilterState(0, init)
    states = []
    for step, y_t in enumerate(tqdm(observations, desc="Filtering", disable=not progress), start=1):
        try:
            state = assimilate(state, problem, y_t, train_cfg, rng, arch, filter_cfg, progress=False)
        except Exception as e:
            raise FilterStepError(step, e) from e
        states.append(state)
    logger.info(f"Filter run finished: {len(states)} steps")
    return states
