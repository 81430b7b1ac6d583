"""KL training losses for transport maps, Adam, and the minibatch training loop.

A transport map is any object exposing
    forward(u) -> (v, logdet, cache)
    backward(cache, grad_v, grad_logdet) -> (grad_u, GradientBuffer)
    parameters() -> list of live arrays
which InnMap and HintMap both do.
"""
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm.auto import tqdm

from hint.config import CASES, AnnealConfig, TrainingConfig, settings
from hint.errors import DimensionError, NumericalError, ProblemError
from hint.services.mlp_service import GradientBuffer

logger = logging.getLogger(__name__)

FD_STEP = 1e-6


@dataclass
class ForwardProblem:
    """Prior p_x, forward model F and Gaussian observation noise sigma_y.

    prior_sampler(rng, n) returns an (n, d) array. F maps one state of shape
    (d,) to an observation of shape (m,); with `vectorized` it maps (n, d) to
    (n, m). prior_logpdf and prior_logpdf_grad act on (n, d) batches.
    """

    prior_sampler: Callable[[np.random.Generator, int], np.ndarray]
    F: Callable[[np.ndarray], np.ndarray]
    sigma_y: float
    dim_x: int
    dim_y: int
    prior_logpdf: Optional[Callable[[np.ndarray], np.ndarray]] = None
    prior_logpdf_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    F_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    vectorized: bool = False
    f_evaluations: int = field(default=0, init=False)

    def __post_init__(self):
        if not self.sigma_y > 0:
            raise ProblemError(f"sigma_y must be positive, got {self.sigma_y}")
        if self.dim_x < 1 or self.dim_y < 1:
            raise DimensionError("dim_x and dim_y must be >= 1")

    def sample_prior(self, rng: np.random.Generator, n: int) -> np.ndarray:
        x = np.asarray(self.prior_sampler(rng, n), dtype=np.float64).reshape(n, -1)
        if x.shape[1] != self.dim_x:
            raise DimensionError(f"Prior sampler returned states of dim {x.shape[1]}, expected {self.dim_x}")
        return x

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        """F applied row-wise; every row counts as one model evaluation"""
        x = np.asarray(x, dtype=np.float64)
        if self.vectorized:
            fx = np.asarray(self.F(x), dtype=np.float64).reshape(x.shape[0], -1)
        else:
            fx = np.stack([np.atleast_1d(np.asarray(self.F(xi), dtype=np.float64)) for xi in x])
        if fx.shape != (x.shape[0], self.dim_y):
            raise DimensionError(f"F returned shape {fx.shape}, expected ({x.shape[0]}, {self.dim_y})")
        self.f_evaluations += x.shape[0]
        return fx

    def jacobian_batch(self, x: np.ndarray) -> np.ndarray:
        """(n, m, d) Jacobians of F, analytic when F_grad is set, else central differences"""
        if self.F_grad is not None:
            return np.stack([np.asarray(self.F_grad(xi), dtype=np.float64).reshape(self.dim_y, self.dim_x) for xi in x])
        n, d = x.shape
        jac = np.empty((n, self.dim_y, d))
        for j in range(d):
            h = FD_STEP * (1.0 + np.abs(x[:, j]))
            xp, xm = x.copy(), x.copy()
            xp[:, j] += h
            xm[:, j] -= h
            jac[:, :, j] = (self.forward_batch(xp) - self.forward_batch(xm)) / (2.0 * h[:, None])
        return jac

    def prior_score(self, x: np.ndarray) -> np.ndarray:
        """Gradient of log p_x at each row of x"""
        if self.prior_logpdf is None:
            raise ProblemError("The prior log-density is not available for this problem")
        if self.prior_logpdf_grad is not None:
            return np.asarray(self.prior_logpdf_grad(x), dtype=np.float64)
        grad = np.empty_like(x)
        for j in range(x.shape[1]):
            h = FD_STEP * (1.0 + np.abs(x[:, j]))
            xp, xm = x.copy(), x.copy()
            xp[:, j] += h
            xm[:, j] -= h
            grad[:, j] = (self.prior_logpdf(xp) - self.prior_logpdf(xm)) / (2.0 * h)
        return grad


@dataclass
class LossSpec:
    case: str = "case3"
    batch_size: int = 256
    observed_y: Optional[np.ndarray] = None
    anneal: Optional[AnnealConfig] = None

    def __post_init__(self):
        if self.case not in CASES:
            raise ProblemError(f"Unknown loss case {self.case!r}; expected one of {CASES}")
        if self.batch_size < 1:
            raise ProblemError("batch_size must be >= 1")
        if self.case == "case2" and self.observed_y is None:
            raise ProblemError("case2 training requires the observation y")

    def sigma_at(self, epoch: int, sigma_y: float) -> float:
        """Geometric sigma_y schedule, floored at the true noise level"""
        if self.anneal is None:
            return sigma_y
        return max(sigma_y, self.anneal.initial * self.anneal.factor ** epoch)


def sample_joint_batch(problem: ForwardProblem, rng: np.random.Generator, n: int, noise_free: bool = False) -> np.ndarray:
    """n draws of w = [F(x) + sigma_y xi, x] with x ~ p_x"""
    x = problem.sample_prior(rng, n)
    y = problem.forward_batch(x)
    if not noise_free:
        y = y + problem.sigma_y * rng.standard_normal(y.shape)
    return np.concatenate([y, x], axis=1)


def sample_joint(problem: ForwardProblem, rng: np.random.Generator, noise_free: bool = False) -> np.ndarray:
    return sample_joint_batch(problem, rng, 1, noise_free)[0]


def _as_rows(u: np.ndarray, dim: int, what: str) -> np.ndarray:
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"{what} has shape {np.shape(u)}, expected (n, {dim})")
    if arr.shape[0] == 0:
        raise ProblemError(f"{what} is empty")
    return arr


def loss_case1(tmap, x: np.ndarray, problem: ForwardProblem, fx: Optional[np.ndarray] = None, sigma_y: Optional[float] = None) -> Tuple[float, GradientBuffer]:
    """mean of |T^y(x) - F(x)|^2 / (2 sigma_y^2) + |T^z(x)|^2 / 2 - log|det grad T(x)|"""
    m, d = problem.dim_y, tmap.dim
    if m >= d:
        raise DimensionError(f"case1 needs dim_y < dim_x, got m={m}, d={d}")
    x = _as_rows(x, d, "case1 batch")
    sigma = problem.sigma_y if sigma_y is None else sigma_y
    if fx is None:
        fx = problem.forward_batch(x)
    n = x.shape[0]
    v, logdet, cache = tmap.forward(x)
    resid = v[:, :m] - fx
    tail = v[:, m:]
    per_sample = 0.5 * np.sum(resid ** 2, axis=1) / sigma ** 2 + 0.5 * np.sum(tail ** 2, axis=1) - logdet
    grad_v = np.concatenate([resid / sigma ** 2, tail], axis=1) / n
    _, grads = tmap.backward(cache, grad_v, -1.0 / n)
    return float(np.mean(per_sample)), grads


def loss_case2(tmap, z: np.ndarray, problem: ForwardProblem, y: np.ndarray, sigma_y: Optional[float] = None) -> Tuple[float, GradientBuffer]:
    """mean of |y - F(T(z))|^2 / (2 sigma_y^2) - log p_x(T(z)) - log|det grad T(z)|"""
    if problem.prior_logpdf is None:
        raise ProblemError("case2 needs the prior log-density")
    d = tmap.dim
    if d != problem.dim_x:
        raise DimensionError(f"case2 map has dim {d}, problem has dim_x={problem.dim_x}")
    z = _as_rows(z, d, "case2 batch")
    y = np.asarray(y, dtype=np.float64).reshape(problem.dim_y)
    sigma = problem.sigma_y if sigma_y is None else sigma_y
    n = z.shape[0]
    x, logdet, cache = tmap.forward(z)
    resid = y - problem.forward_batch(x)
    log_prior = np.asarray(problem.prior_logpdf(x), dtype=np.float64).reshape(n)
    per_sample = 0.5 * np.sum(resid ** 2, axis=1) / sigma ** 2 - log_prior - logdet
    jac = problem.jacobian_batch(x)
    grad_x = -np.einsum("nmd,nm->nd", jac, resid) / sigma ** 2 - problem.prior_score(x)
    _, grads = tmap.backward(cache, grad_x / n, -1.0 / n)
    return float(np.mean(per_sample)), grads


def loss_case3(tmap, w: np.ndarray) -> Tuple[float, GradientBuffer]:
    """mean of |T(w)|^2 / 2 - log|det grad T(w)|"""
    w = _as_rows(w, tmap.dim, "case3 batch")
    n = w.shape[0]
    v, logdet, cache = tmap.forward(w)
    per_sample = 0.5 * np.sum(v ** 2, axis=1) - logdet
    _, grads = tmap.backward(cache, v / n, -1.0 / n)
    return float(np.mean(per_sample)), grads


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0

    @classmethod
    def for_parameters(cls, params: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return cls(lr, beta1, beta2, eps, [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: GradientBuffer) -> None:
    """One bias-corrected Adam update, in place on params and state"""
    arrays = grads.arrays if isinstance(grads, GradientBuffer) else list(grads)
    if not (len(params) == len(arrays) == len(state.m) == len(state.v)):
        raise DimensionError("Parameters, gradients and Adam moments have different lengths")
    for p, g, m in zip(params, arrays, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"Shape mismatch in Adam step: param {p.shape}, grad {g.shape}, moment {m.shape}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    step_size = state.lr / bc1
    for p, g, m, v in zip(params, arrays, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= step_size * m / (np.sqrt(v / bc2) + state.eps)


@dataclass
class TrainReport:
    losses: List[float]
    wall_time: float
    map: object
    seeds: Dict[str, Optional[int]]
    f_evaluations: int
    identity_loss: Optional[float] = None

    @property
    def final_loss(self) -> Optional[float]:
        return self.losses[-1] if self.losses else None


def build_training_set(tmap, spec: LossSpec, problem: ForwardProblem, n: int, rng: np.random.Generator, data: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """Fixed Monte Carlo training set; F is evaluated here, never inside the epochs, except for case2"""
    if data is None and n < 1:
        raise ProblemError("The training set must contain at least one sample")
    if spec.case == "case1":
        x = problem.sample_prior(rng, n) if data is None else _as_rows(data, tmap.dim, "training set")
        return {"x": x, "fx": problem.forward_batch(x)}
    if spec.case == "case2":
        z = rng.standard_normal((n, tmap.dim)) if data is None else _as_rows(data, tmap.dim, "training set")
        return {"z": z}
    if tmap.dim != problem.dim_x + problem.dim_y:
        raise DimensionError(f"Joint map must have dim m + d = {problem.dim_x + problem.dim_y}, got {tmap.dim}")
    w = sample_joint_batch(problem, rng, n) if data is None else _as_rows(data, tmap.dim, "training set")
    return {"w": w}


def identity_loss(spec: LossSpec, problem: ForwardProblem, data: Dict[str, np.ndarray], sigma: Optional[float] = None) -> Optional[float]:
    """Loss of the identity map on a built training set; None for case2, whose identity loss needs F"""
    sigma = problem.sigma_y if sigma is None else sigma
    if spec.case == "case1":
        x, m = data["x"], problem.dim_y
        resid = x[:, :m] - data["fx"]
        return float(np.mean(0.5 * np.sum(resid ** 2, axis=1) / sigma ** 2 + 0.5 * np.sum(x[:, m:] ** 2, axis=1)))
    if spec.case == "case2":
        return None
    return float(np.mean(0.5 * np.sum(data["w"] ** 2, axis=1)))


def _batch_loss(tmap, spec: LossSpec, problem: ForwardProblem, batch: Dict[str, np.ndarray], sigma: float):
    if spec.case == "case1":
        return loss_case1(tmap, batch["x"], problem, fx=batch["fx"], sigma_y=sigma)
    if spec.case == "case2":
        return loss_case2(tmap, batch["z"], problem, spec.observed_y, sigma_y=sigma)
    return loss_case3(tmap, batch["w"])


def train(
    tmap,
    spec: LossSpec,
    problem: ForwardProblem,
    epochs: int,
    train_set_size: int,
    rng: np.random.Generator,
    config: Optional[TrainingConfig] = None,
    training_set: Optional[np.ndarray] = None,
    callback: Optional[Callable[[int, float, object], None]] = None,
    seed: Optional[int] = None,
    progress: Optional[bool] = None,
) -> TrainReport:
    """Minibatch Adam on a fixed training set; parameters of tmap are updated in place.

    Passing a map whose parameters come from an earlier run warm-starts it.
    The callback, if given, is called as callback(epoch, loss, tmap) after every epoch.
    """
    config = config or TrainingConfig()
    progress = settings.PROGRESS if progress is None else progress
    if epochs < 0:
        raise ProblemError("epochs must be >= 0")
    if training_set is not None and len(training_set) == 0:
        raise ProblemError("The training set must contain at least one sample")

    start = time.time()
    f_before = problem.f_evaluations
    data = build_training_set(tmap, spec, problem, train_set_size, rng, training_set)
    n = len(next(iter(data.values())))
    logger.info(f"Prepared {spec.case} training set of {n} samples (F evaluations: {problem.f_evaluations - f_before})")
    baseline = identity_loss(spec, problem, data)

    params = tmap.parameters()
    adam = AdamState.for_parameters(params, config.learning_rate, config.beta1, config.beta2, config.eps)
    losses: List[float] = []

    for epoch in tqdm(range(epochs), desc=f"Training {spec.case}", disable=not progress):
        if config.resample_each_epoch and epoch > 0 and training_set is None:
            data = build_training_set(tmap, spec, problem, train_set_size, rng)
        sigma = spec.sigma_at(epoch, problem.sigma_y)
        order = rng.permutation(n)
        total = 0.0
        for begin in range(0, n, spec.batch_size):
            idx = order[begin:begin + spec.batch_size]
            batch = {key: arr[idx] for key, arr in data.items()}
            loss, grads = _batch_loss(tmap, spec, problem, batch, sigma)
            if not np.isfinite(loss):
                raise NumericalError(f"Non-finite {spec.case} loss at epoch {epoch + 1}")
            adam_step(adam, params, grads)
            total += loss * len(idx)
        epoch_loss = total / n
        losses.append(epoch_loss)
        logger.debug(f"Epoch {epoch + 1}/{epochs} loss={epoch_loss:.6f} sigma_y={sigma:.4g}")
        if callback is not None:
            callback(epoch, epoch_loss, tmap)

    wall = time.time() - start
    f_evals = problem.f_evaluations - f_before
    if losses:
        logger.info(f"Finished {epochs} epochs in {wall:.1f}s, final loss={losses[-1]:.6f}")
    return TrainReport(losses, wall, tmap, {"seed": seed}, f_evals, baseline)


class TrainingService:
    """Runs `train` with the settings of a TrainingConfig"""

    def __init__(self, config: Optional[TrainingConfig] = None, progress: Optional[bool] = None):
        self.config = config or TrainingConfig()
        self.progress = settings.PROGRESS if progress is None else progress

    def loss_spec(self, observed_y: Optional[np.ndarray] = None, case: Optional[str] = None) -> LossSpec:
        return LossSpec(case or self.config.case, self.config.batch_size, observed_y, self.config.anneal)

    def fit(
        self,
        tmap,
        problem: ForwardProblem,
        rng: np.random.Generator,
        observed_y: Optional[np.ndarray] = None,
        case: Optional[str] = None,
        epochs: Optional[int] = None,
        training_set: Optional[np.ndarray] = None,
        callback: Optional[Callable[[int, float, object], None]] = None,
        seed: Optional[int] = None,
    ) -> TrainReport:
        spec = self.loss_spec(observed_y, case)
        return train(
            tmap,
            spec,
            problem,
            self.config.epochs if epochs is None else epochs,
            self.config.train_set_size,
            rng,
            config=self.config,
            training_set=training_set,
            callback=callback,
            seed=seed,
            progress=self.progress,
        )
