"""Empirical convergence of the transport-map estimator in the training-set size N."""
import copy
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from hint.config import ArchitectureConfig, TrainingConfig, settings
from hint.errors import HintError, ProblemError
from hint.services.coupling_service import build_inn_map
from hint.services.hint_service import build_hint_map
from hint.services.transport_service import ForwardProblem, LossSpec, train

logger = logging.getLogger(__name__)

SLOPE_BAND = (-0.8, -0.2)


@dataclass
class ConvergenceTable:
    rows: List[Dict] = field(default_factory=list)
    slope: Optional[float] = None
    within_band: Optional[bool] = None
    failures: List[Dict] = field(default_factory=list)


def _build_map(problem: ForwardProblem, arch: ArchitectureConfig, seed: int):
    rng = np.random.default_rng(seed)
    if arch.kind == "inn":
        return build_inn_map(problem.dim_y + problem.dim_x, arch, rng)
    return build_hint_map(problem.dim_y, problem.dim_x, arch, rng)


def epochs_for_steps(n: int, batch_size: int, steps: int) -> int:
    """Epochs over n samples needed for at least `steps` minibatch updates"""
    per_epoch = -(-n // batch_size)
    return max(1, -(-steps // per_epoch))


def _replicate(problem, arch, train_cfg, n, epochs, probe_points, init_seed, data_seed):
    local = copy.copy(problem)
    tmap = _build_map(local, arch, init_seed)
    spec = LossSpec("case3", train_cfg.batch_size)
    train(tmap, spec, local, epochs, n, np.random.default_rng(data_seed), config=train_cfg, progress=False)
    values, _, _ = tmap.forward(probe_points)
    return values


def convergence_study(
    problem: ForwardProblem,
    arch: ArchitectureConfig,
    train_cfg: TrainingConfig,
    n_list: Sequence[int],
    replicates: int,
    probe_points: np.ndarray,
    rng: np.random.Generator,
    replicate_seeds: Optional[Sequence[int]] = None,
    workers: Optional[int] = None,
    adam_steps: Optional[int] = None,
) -> ConvergenceTable:
    """Spread of T(probe; theta_N) over replicate training sets, for each N in n_list.

    All replicates share one initialisation seed, so the spread reflects the
    training data only. The log-log slope of spread against N is reported when
    n_list has two or more entries. Every replicate gets the same number of
    Adam steps (default: train_cfg.epochs over the largest N), so small N is
    not also under-trained.
    """
    n_list = [int(n) for n in n_list]
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ProblemError(f"n_list must be nonempty and strictly increasing, got {n_list}")
    if replicates < 8:
        raise ProblemError(f"convergence_study needs at least 8 replicates, got {replicates}")
    if replicate_seeds is not None and len(replicate_seeds) != replicates:
        raise ProblemError("replicate_seeds must have one seed per replicate")
    probe_points = np.atleast_2d(np.asarray(probe_points, dtype=np.float64))
    workers = workers or settings.WORKERS
    init_seed = int(rng.integers(2 ** 32))
    if adam_steps is None:
        adam_steps = train_cfg.epochs * -(-n_list[-1] // train_cfg.batch_size)
    if adam_steps < 1:
        raise ProblemError(f"adam_steps must be >= 1, got {adam_steps}")

    table = ConvergenceTable()
    for n in n_list:
        epochs = epochs_for_steps(n, train_cfg.batch_size, adam_steps)
        seeds = list(replicate_seeds) if replicate_seeds is not None else [int(s) for s in rng.integers(2 ** 32, size=replicates)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_replicate, problem, arch, train_cfg, n, epochs, probe_points, init_seed, s) for s in seeds]
        outputs = []
        for k, future in enumerate(futures):
            try:
                outputs.append(future.result())
            except HintError as e:
                logger.warning(f"Replicate {k} at N={n} failed and was skipped: {e}")
                table.failures.append({"N": n, "replicate": k, "error": str(e)})
        if len(outputs) < 2:
            logger.warning(f"Fewer than 2 successful replicates at N={n}; no spread reported")
            table.rows.append({"N": n, "std": None, "replicates": len(outputs), "epochs": epochs})
            continue
        spread = np.std(np.stack(outputs), axis=0, ddof=1)
        table.rows.append({"N": n, "std": float(spread.mean()), "max_std": float(spread.max()), "replicates": len(outputs), "epochs": epochs})
        logger.info(f"Convergence N={n}: mean probe std={spread.mean():.4g} over {len(outputs)} replicates")

    points = [(r["N"], r["std"]) for r in table.rows if r["std"] is not None and r["std"] > 0]
    if len(points) >= 2:
        log_n, log_std = np.log([p[0] for p in points]), np.log([p[1] for p in points])
        table.slope = float(np.polyfit(log_n, log_std, 1)[0])
        table.within_band = SLOPE_BAND[0] <= table.slope <= SLOPE_BAND[1]
        if not table.within_band:
            logger.warning(f"Convergence slope {table.slope:.3f} outside {SLOPE_BAND}; diagnostic only")
        else:
            logger.info(f"Convergence slope {table.slope:.3f}")
    return table
