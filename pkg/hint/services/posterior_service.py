"""Posterior samplers built on trained transport maps."""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from hint.errors import DimensionError, ProblemError
from hint.services.hint_service import HintMap, hint_inverse, marginal_forward_y

logger = logging.getLogger(__name__)


@dataclass
class PosteriorSampleSet:
    samples: np.ndarray
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[0] == 0:
            raise ProblemError("A posterior sample set needs a nonempty (n, d) array")

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def __len__(self) -> int:
        return self.samples.shape[0]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def covariance(self) -> np.ndarray:
        return np.atleast_2d(np.cov(self.samples, rowvar=False))


def _provenance(case: str, y: Optional[np.ndarray], checkpoint_id: Optional[str]) -> Dict:
    return {
        "case": case,
        "checkpoint": checkpoint_id,
        "observation": None if y is None else [float(v) for v in np.ravel(y)],
    }


def sample_posterior_case1(tmap, y: np.ndarray, n_out: int, rng: np.random.Generator, checkpoint_id: Optional[str] = None) -> PosteriorSampleSet:
    """x_k = S([y, z_k]) with z_k ~ N(0, I_{d-m}) and S the inverse of a case1 map"""
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    m, d = y.shape[0], tmap.dim
    if y.ndim != 1 or m >= d:
        raise DimensionError(f"Observation of shape {y.shape} cannot condition a case1 map of dim {d}")
    z = rng.standard_normal((n_out, d - m))
    samples = tmap.inverse(np.concatenate([np.tile(y, (n_out, 1)), z], axis=1))
    logger.info(f"Drew {n_out} case1 posterior samples")
    return PosteriorSampleSet(samples, _provenance("case1", y, checkpoint_id))


def sample_posterior_case2(tmap, n: int, rng: np.random.Generator, y: Optional[np.ndarray] = None, checkpoint_id: Optional[str] = None) -> PosteriorSampleSet:
    """x_k = T(z_k) with z_k ~ N(0, I_d) for a map trained against one observation"""
    z = rng.standard_normal((n, tmap.dim))
    samples, _, _ = tmap.forward(z)
    logger.info(f"Drew {n} case2 posterior samples")
    return PosteriorSampleSet(samples, _provenance("case2", y, checkpoint_id))


def sample_posterior_hint(hmap: HintMap, y: np.ndarray, n_out: int, rng: np.random.Generator, checkpoint_id: Optional[str] = None) -> PosteriorSampleSet:
    """x-block of S([T^y(y), z_x]) with z_x ~ N(0, I_d)"""
    if not isinstance(hmap, HintMap) or not hmap.kr_enforced:
        raise ProblemError("HINT posterior sampling needs a KR-enforced HintMap")
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if y.shape != (hmap.dim_y,):
        raise DimensionError(f"Observation has shape {y.shape}, expected ({hmap.dim_y},)")
    z_y = marginal_forward_y(hmap, y)
    z_x = rng.standard_normal((n_out, hmap.dim_x))
    w = hint_inverse(hmap, np.concatenate([np.tile(z_y, (n_out, 1)), z_x], axis=1))
    logger.info(f"Drew {n_out} HINT posterior samples")
    return PosteriorSampleSet(w[:, hmap.dim_y:], _provenance("case3", y, checkpoint_id))


def sample_joint_from_map(hmap: HintMap, n: int, rng: np.random.Generator) -> np.ndarray:
    """Joint samples [y, x] = S(z) with z ~ N(0, I_{m+d})"""
    return hint_inverse(hmap, rng.standard_normal((n, hmap.dim)))
