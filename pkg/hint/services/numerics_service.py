"""Orthogonal and conformal mixing blocks.

Vectors are numpy float64 arrays. Every operation accepts a single vector of
shape (dim,) or a batch of shape (n, dim) and returns the same layout.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Tuple, Union

import numpy as np

from hint.errors import DimensionError, SingularityError

logger = logging.getLogger(__name__)

UNIT_NORM_TOL = 1e-12
REDRAW_NORM = 1e-8


def as_batch(u: np.ndarray, dim: int, what: str = "input") -> Tuple[np.ndarray, bool]:
    """Return (2-d float64 view of u, whether u was a single vector)"""
    arr = np.asarray(u, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise DimensionError(f"{what} has shape {np.shape(u)}, expected (..., {dim})")
    return arr, single


def restore(arr: np.ndarray, single: bool) -> np.ndarray:
    return arr[0] if single else arr


@dataclass
class HouseholderStack:
    """Q = H_count ... H_1 with H_k = I - 2 v_k v_k^T"""

    dim: int
    reflectors: List[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.reflectors = [np.asarray(v, dtype=np.float64) for v in self.reflectors]
        for v in self.reflectors:
            if v.shape != (self.dim,):
                raise DimensionError(f"Reflector of shape {v.shape} in a stack of dim {self.dim}")
            if abs(np.linalg.norm(v) - 1.0) > UNIT_NORM_TOL:
                raise ValueError("Householder reflectors must have unit norm")

    @property
    def count(self) -> int:
        return len(self.reflectors)

    def matrix(self) -> np.ndarray:
        """Explicit Q, built by applying the stack to the basis vectors"""
        return householder_apply(self, np.eye(self.dim)).T


def random_householder_stack(dim: int, count: int, rng: np.random.Generator) -> HouseholderStack:
    """Reflectors drawn uniformly on the unit sphere"""
    reflectors = []
    for _ in range(count):
        v = rng.standard_normal(dim)
        norm = np.linalg.norm(v)
        while norm < REDRAW_NORM:
            v = rng.standard_normal(dim)
            norm = np.linalg.norm(v)
        reflectors.append(v / norm)
    return HouseholderStack(dim, reflectors)


def _reflect(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    return x - 2.0 * np.outer(x @ v, v)


def householder_apply(stack: HouseholderStack, u: np.ndarray) -> np.ndarray:
    x, single = as_batch(u, stack.dim)
    x = x.copy()
    for v in stack.reflectors:
        x = _reflect(x, v)
    return restore(x, single)


def householder_apply_adjoint(stack: HouseholderStack, u: np.ndarray) -> np.ndarray:
    x, single = as_batch(u, stack.dim)
    x = x.copy()
    for v in reversed(stack.reflectors):
        x = _reflect(x, v)
    return restore(x, single)


@dataclass
class MobiusParams:
    """Q(u) = b + alpha * Q (u - a) / ||u - a||^gamma"""

    b: np.ndarray
    a: np.ndarray
    alpha: float
    gamma: int
    Q: HouseholderStack

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=np.float64)
        self.a = np.asarray(self.a, dtype=np.float64)
        if self.alpha == 0:
            raise ValueError("Möbius alpha must be nonzero")
        if self.gamma not in (0, 2):
            raise ValueError(f"Möbius gamma must be 0 or 2, got {self.gamma}")
        if self.b.shape != (self.Q.dim,) or self.a.shape != (self.Q.dim,):
            raise DimensionError("Möbius a, b and Q must share one dimension")

    @property
    def dim(self) -> int:
        return self.Q.dim


def random_mobius(dim: int, gamma: int, count: int, rng: np.random.Generator, scale: float = 1.0) -> MobiusParams:
    alpha = float(rng.uniform(0.5, 2.0) * rng.choice([-1.0, 1.0]))
    return MobiusParams(
        b=scale * rng.standard_normal(dim),
        a=scale * rng.standard_normal(dim),
        alpha=alpha,
        gamma=gamma,
        Q=random_householder_stack(dim, count, rng),
    )


def _squared_radius(w: np.ndarray, what: str) -> np.ndarray:
    r2 = np.einsum("ij,ij->i", w, w)
    if np.any(r2 == 0.0) or not np.all(np.isfinite(r2)):
        raise SingularityError(f"Möbius map evaluated at its singular point ({what})")
    return r2


def mobius_forward(p: MobiusParams, u: np.ndarray) -> Tuple[np.ndarray, Union[float, np.ndarray]]:
    """Map u and return log|det grad Q(u)| alongside"""
    x, single = as_batch(u, p.dim)
    w = x - p.a
    dim = p.dim
    if p.gamma == 0:
        v = p.b + p.alpha * householder_apply(p.Q, w)
        logdet = np.full(x.shape[0], dim * np.log(abs(p.alpha)))
    else:
        r2 = _squared_radius(w, "u == a")
        v = p.b + p.alpha * householder_apply(p.Q, w) / r2[:, None]
        # log r^(-2 dim) = -dim log r^2
        logdet = dim * np.log(abs(p.alpha)) - dim * np.log(r2)
    return restore(v, single), (logdet[0] if single else logdet)


def mobius_inverse(p: MobiusParams, v: np.ndarray) -> np.ndarray:
    y, single = as_batch(v, p.dim)
    d = y - p.b
    if p.gamma == 0:
        u = p.a + householder_apply_adjoint(p.Q, d) / p.alpha
    else:
        r2 = _squared_radius(d, "v == b")
        u = p.a + p.alpha * householder_apply_adjoint(p.Q, d) / r2[:, None]
    return restore(u, single)


def mobius_vjp(p: MobiusParams, u: np.ndarray, grad_v: np.ndarray, grad_logdet: np.ndarray) -> np.ndarray:
    """Gradient of grad_v . Q(u) + grad_logdet * log|det grad Q(u)| with respect to u"""
    x, _ = as_batch(u, p.dim)
    h = householder_apply_adjoint(p.Q, grad_v)
    if p.gamma == 0:
        return p.alpha * h
    w = x - p.a
    r2 = _squared_radius(w, "u == a")
    proj = np.einsum("ij,ij->i", w, h) / r2
    grad = (p.alpha / r2)[:, None] * (h - 2.0 * proj[:, None] * w)
    grad -= (2.0 * p.dim * np.asarray(grad_logdet) / r2)[:, None] * w
    return grad


Mixing = Union[HouseholderStack, MobiusParams]


def mix_forward(mixing: Mixing, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Batch-only mixing used inside coupling layers: returns (Q(x), logdet per row)"""
    if isinstance(mixing, MobiusParams):
        v, logdet = mobius_forward(mixing, x)
        return v, np.asarray(logdet)
    return householder_apply(mixing, x), np.zeros(x.shape[0])


def mix_inverse(mixing: Mixing, v: np.ndarray) -> np.ndarray:
    if isinstance(mixing, MobiusParams):
        return mobius_inverse(mixing, v)
    return householder_apply_adjoint(mixing, v)


def mix_vjp(mixing: Mixing, x: np.ndarray, grad_v: np.ndarray, grad_logdet: np.ndarray) -> np.ndarray:
    if isinstance(mixing, MobiusParams):
        return mobius_vjp(mixing, x, grad_v, grad_logdet)
    return householder_apply_adjoint(mixing, grad_v)
