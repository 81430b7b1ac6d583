"""Flat affine coupling layers and their composition T = T_L o ... o T_1."""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from hint.config import ArchitectureConfig
from hint.errors import CacheMismatchError, DimensionError
from hint.services.mlp_service import DenseNet, ForwardCache, GradientBuffer, mlp_backward, mlp_forward, mlp_init
from hint.services.numerics_service import (
    Mixing,
    as_batch,
    mix_forward,
    mix_inverse,
    mix_vjp,
    random_householder_stack,
    random_mobius,
    restore,
)

logger = logging.getLogger(__name__)


def default_split(dim: int) -> Tuple[int, int]:
    return (dim + 1) // 2, dim // 2


def per_row(grad_logdet, n: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(grad_logdet, dtype=np.float64), (n,))


# Affine core shared by flat and hierarchical layers: v2 = a2 * exp(s(a1)) + t(a1)


@dataclass
class AffineCache:
    a2: np.ndarray
    exp_s: np.ndarray
    s_cache: ForwardCache
    t_cache: ForwardCache


def affine_forward(s_net: DenseNet, t_net: DenseNet, a1: np.ndarray, a2: np.ndarray) -> Tuple[np.ndarray, np.ndarray, AffineCache]:
    s, s_cache = mlp_forward(s_net, a1)
    t, t_cache = mlp_forward(t_net, a1)
    exp_s = np.exp(s)
    v2 = a2 * exp_s + t
    return v2, s.sum(axis=1), AffineCache(a2, exp_s, s_cache, t_cache)


def affine_inverse(s_net: DenseNet, t_net: DenseNet, a1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    s, _ = mlp_forward(s_net, a1)
    t, _ = mlp_forward(t_net, a1)
    return (v2 - t) * np.exp(-s)


def affine_backward(
    s_net: DenseNet, t_net: DenseNet, cache: AffineCache, grad_v2: np.ndarray, grad_logdet: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, GradientBuffer]:
    """Returns (grad wrt a1, grad wrt a2, parameter grads of s_net then t_net)"""
    grad_a2 = grad_v2 * cache.exp_s
    grad_s = grad_v2 * cache.a2 * cache.exp_s + grad_logdet[:, None]
    grad_a1_s, grads_s = mlp_backward(s_net, cache.s_cache, grad_s)
    grad_a1_t, grads_t = mlp_backward(t_net, cache.t_cache, grad_v2)
    return grad_a1_s + grad_a1_t, grad_a2, grads_s.extend(grads_t)


def make_subnets(
    d1: int, d2: int, arch: ArchitectureConfig, rng: np.random.Generator
) -> Tuple[DenseNet, DenseNet]:
    """s-net (clamped) and t-net mapping R^d1 -> R^d2"""
    widths = [d1] + arch.hidden_widths(d1) + [d2]
    s_net = mlp_init(widths, arch.leaky_slope, arch.clamp, rng)
    t_net = mlp_init(widths, arch.leaky_slope, None, rng)
    for net in (s_net, t_net):
        net.weights[-1] *= arch.init_scale
    return s_net, t_net


@dataclass
class CouplingLayer:
    dim: int
    split: Tuple[int, int]
    mixing: Mixing
    s_net: DenseNet
    t_net: DenseNet

    def __post_init__(self):
        d1, d2 = self.split
        if d1 < 1 or d2 < 1 or d1 + d2 != self.dim:
            raise DimensionError(f"Invalid split {self.split} for dim {self.dim}")
        if self.mixing.dim != self.dim:
            raise DimensionError("Mixing block dimension differs from the layer dimension")
        for net in (self.s_net, self.t_net):
            if net.dim_in != d1 or net.dim_out != d2:
                raise DimensionError(f"Subnet maps R^{net.dim_in} -> R^{net.dim_out}, expected R^{d1} -> R^{d2}")

    def parameters(self) -> List[np.ndarray]:
        return self.s_net.parameters() + self.t_net.parameters()


@dataclass
class CouplingCache:
    layer_id: int
    x: np.ndarray
    affine: AffineCache
    single: bool


def coupling_forward(layer: CouplingLayer, u: np.ndarray):
    """v = [u~1, u~2 * exp(s(u~1)) + t(u~1)] with u~ = Q u; logdet = sum s + log|det Q|"""
    x, single = as_batch(u, layer.dim)
    mixed, mix_logdet = mix_forward(layer.mixing, x)
    d1 = layer.split[0]
    a1, a2 = mixed[:, :d1], mixed[:, d1:]
    v2, s_sum, affine = affine_forward(layer.s_net, layer.t_net, a1, a2)
    v = np.concatenate([a1, v2], axis=1)
    logdet = s_sum + mix_logdet
    cache = CouplingCache(id(layer), x, affine, single)
    return restore(v, single), (logdet[0] if single else logdet), cache


def coupling_inverse(layer: CouplingLayer, v: np.ndarray) -> np.ndarray:
    y, single = as_batch(v, layer.dim)
    d1 = layer.split[0]
    a1, v2 = y[:, :d1], y[:, d1:]
    a2 = affine_inverse(layer.s_net, layer.t_net, a1, v2)
    u = mix_inverse(layer.mixing, np.concatenate([a1, a2], axis=1))
    return restore(u, single)


def coupling_backward(layer: CouplingLayer, cache: CouplingCache, grad_v: np.ndarray, grad_logdet) -> Tuple[np.ndarray, GradientBuffer]:
    if cache.layer_id != id(layer):
        raise CacheMismatchError("CouplingCache was produced by a different layer")
    g, _ = as_batch(grad_v, layer.dim, "output gradient")
    if g.shape[0] != cache.x.shape[0]:
        raise CacheMismatchError("Gradient batch size does not match the cached forward pass")
    gld = per_row(grad_logdet, g.shape[0])
    d1 = layer.split[0]
    grad_a1, grad_a2, grads = affine_backward(layer.s_net, layer.t_net, cache.affine, g[:, d1:], gld)
    grad_a1 = g[:, :d1] + grad_a1
    grad_mixed = np.concatenate([grad_a1, grad_a2], axis=1)
    grad_u = mix_vjp(layer.mixing, cache.x, grad_mixed, gld)
    return restore(grad_u, cache.single), grads


@dataclass
class InnMap:
    layers: List[CouplingLayer]
    dim: int

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("InnMap needs at least one layer")
        if any(layer.dim != self.dim for layer in self.layers):
            raise DimensionError("All coupling layers of an InnMap must share its dimension")

    def parameters(self) -> List[np.ndarray]:
        params = []
        for layer in self.layers:
            params.extend(layer.parameters())
        return params

    def forward(self, u):
        return inn_forward(self, u)

    def inverse(self, v):
        return inn_inverse(self, v)

    def backward(self, caches, grad_v, grad_logdet):
        return inn_backward(self, caches, grad_v, grad_logdet)


@dataclass
class MapCache:
    map_id: int
    layer_caches: list
    single: bool


def inn_forward(inn: InnMap, u: np.ndarray):
    x, single = as_batch(u, inn.dim)
    total = np.zeros(x.shape[0])
    caches = []
    for layer in inn.layers:
        x, logdet, cache = coupling_forward(layer, x)
        total = total + logdet
        caches.append(cache)
    return restore(x, single), (total[0] if single else total), MapCache(id(inn), caches, single)


def inn_inverse(inn: InnMap, v: np.ndarray) -> np.ndarray:
    y, single = as_batch(v, inn.dim)
    for layer in reversed(inn.layers):
        y = coupling_inverse(layer, y)
    return restore(y, single)


def inn_backward(inn: InnMap, caches: MapCache, grad_v: np.ndarray, grad_logdet) -> Tuple[np.ndarray, GradientBuffer]:
    """Gradient of grad_v . T(u) + grad_logdet * log|det grad T(u)|"""
    if caches.map_id != id(inn) or len(caches.layer_caches) != len(inn.layers):
        raise CacheMismatchError("Caches were produced by a different map")
    g, _ = as_batch(grad_v, inn.dim, "output gradient")
    per_layer = []
    for layer, cache in zip(reversed(inn.layers), reversed(caches.layer_caches)):
        g, grads = coupling_backward(layer, cache, g, grad_logdet)
        per_layer.append(grads)
    buffer = GradientBuffer()
    for grads in reversed(per_layer):
        buffer.extend(grads)
    return restore(g, caches.single), buffer


def build_coupling_layer(
    dim: int,
    arch: ArchitectureConfig,
    rng: np.random.Generator,
    split: Optional[Tuple[int, int]] = None,
) -> CouplingLayer:
    split = split or default_split(dim)
    count = arch.reflectors_for(dim)
    if arch.mixing == "mobius":
        mixing: Mixing = random_mobius(dim, arch.mobius_gamma, count, rng)
    else:
        mixing = random_householder_stack(dim, count, rng)
    s_net, t_net = make_subnets(split[0], split[1], arch, rng)
    return CouplingLayer(dim, split, mixing, s_net, t_net)


def build_inn_map(dim: int, arch: ArchitectureConfig, rng: np.random.Generator) -> InnMap:
    if dim < 2:
        raise DimensionError("A coupling map needs dim >= 2")
    inn = InnMap([build_coupling_layer(dim, arch, rng) for _ in range(arch.n_layers)], dim)
    logger.info(f"Built INN map: dim={dim}, layers={len(inn.layers)}, parameters={sum(p.size for p in inn.parameters())}")
    return inn
