"""Hierarchical coupling layers on binary split trees, with Knothe-Rosenblatt roots.

A layer is a tree of SplitNode objects. A node with input u computes
u~ = Q u, sends u~1 through its left subtree and u~2 through its right
subtree, then couples: v = [T_left(u~1), T_right(u~2) * exp(s(u~1)) + t(u~1)].
Missing children are identity leaves. With the root split at (m | d) and an
empty root Q, the first m outputs depend on y only.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from hint.config import ArchitectureConfig
from hint.errors import CacheMismatchError, DimensionError
from hint.services.coupling_service import (
    AffineCache,
    affine_backward,
    affine_forward,
    affine_inverse,
    default_split,
    make_subnets,
    per_row,
)
from hint.services.mlp_service import DenseNet, GradientBuffer
from hint.services.numerics_service import (
    HouseholderStack,
    as_batch,
    householder_apply,
    householder_apply_adjoint,
    random_householder_stack,
    restore,
)

logger = logging.getLogger(__name__)


@dataclass
class SplitNode:
    dim: int
    split: Tuple[int, int]
    Q: HouseholderStack
    s_net: DenseNet
    t_net: DenseNet
    left: Optional["SplitNode"] = None
    right: Optional["SplitNode"] = None

    def __post_init__(self):
        d1, d2 = self.split
        if d1 < 1 or d2 < 1 or d1 + d2 != self.dim:
            raise DimensionError(f"Invalid split {self.split} for node of dim {self.dim}")
        if self.Q.dim != self.dim:
            raise DimensionError("Node Q dimension differs from node dimension")
        if self.left is not None and self.left.dim != d1:
            raise DimensionError("Left child dimension must equal the first split part")
        if self.right is not None and self.right.dim != d2:
            raise DimensionError("Right child dimension must equal the second split part")

    def nodes(self) -> List["SplitNode"]:
        """Pre-order: self, left subtree, right subtree"""
        out = [self]
        if self.left is not None:
            out.extend(self.left.nodes())
        if self.right is not None:
            out.extend(self.right.nodes())
        return out

    def parameters(self) -> List[np.ndarray]:
        params = []
        for node in self.nodes():
            params.extend(node.s_net.parameters() + node.t_net.parameters())
        return params

    @property
    def H(self) -> int:
        return len(self.nodes())

    @property
    def depth(self) -> int:
        below = [child.depth for child in (self.left, self.right) if child is not None]
        return 1 + max(below, default=0)


# A split tree is identified with its root node
SplitTree = SplitNode


@dataclass
class NodeCache:
    node_id: int
    x: np.ndarray
    affine: AffineCache
    left: Optional["NodeCache"]
    right: Optional["NodeCache"]


def _build_node(dim: int, split: Tuple[int, int], depth: int, Q: HouseholderStack, arch: ArchitectureConfig, rng) -> SplitNode:
    s_net, t_net = make_subnets(split[0], split[1], arch, rng)
    children = []
    for part in split:
        if depth > 1 and part > 1:
            child_Q = random_householder_stack(part, arch.reflectors_for(part), rng)
            children.append(_build_node(part, default_split(part), depth - 1, child_Q, arch, rng))
        else:
            children.append(None)
    return SplitNode(dim, split, Q, s_net, t_net, children[0], children[1])


def build_split_tree(
    dim_y: int,
    dim_x: int,
    depth: int,
    rng: np.random.Generator,
    arch: Optional[ArchitectureConfig] = None,
    kr_enforced: bool = True,
) -> SplitTree:
    """Root splits (dim_y | dim_x); children split balanced until `depth` levels or dim 1"""
    if depth < 1:
        raise DimensionError(f"Tree depth must be >= 1, got {depth}")
    if dim_y < 1 or dim_x < 1:
        raise DimensionError("dim_y and dim_x must be >= 1")
    arch = arch or ArchitectureConfig()
    dim = dim_y + dim_x
    if kr_enforced:
        root_Q = HouseholderStack(dim)
    else:
        root_Q = random_householder_stack(dim, arch.reflectors_for(dim), rng)
    return _build_node(dim, (dim_y, dim_x), depth, root_Q, arch, rng)


def _node_forward(node: SplitNode, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, NodeCache]:
    mixed = householder_apply(node.Q, x)
    d1 = node.split[0]
    a1, a2 = mixed[:, :d1], mixed[:, d1:]
    if node.left is not None:
        o1, ld_left, c_left = _node_forward(node.left, a1)
    else:
        o1, ld_left, c_left = a1, 0.0, None
    if node.right is not None:
        o2, ld_right, c_right = _node_forward(node.right, a2)
    else:
        o2, ld_right, c_right = a2, 0.0, None
    v2, s_sum, affine = affine_forward(node.s_net, node.t_net, a1, o2)
    v = np.concatenate([o1, v2], axis=1)
    logdet = s_sum + ld_left + ld_right
    return v, logdet, NodeCache(id(node), x, affine, c_left, c_right)


def _node_inverse(node: SplitNode, y: np.ndarray) -> np.ndarray:
    d1 = node.split[0]
    o1, v2 = y[:, :d1], y[:, d1:]
    a1 = _node_inverse(node.left, o1) if node.left is not None else o1
    o2 = affine_inverse(node.s_net, node.t_net, a1, v2)
    a2 = _node_inverse(node.right, o2) if node.right is not None else o2
    return householder_apply_adjoint(node.Q, np.concatenate([a1, a2], axis=1))


def _node_backward(node: SplitNode, cache: NodeCache, g: np.ndarray, gld: np.ndarray) -> Tuple[np.ndarray, List[GradientBuffer]]:
    """Returns (grad wrt node input, gradient buffers in pre-order)"""
    if cache.node_id != id(node):
        raise CacheMismatchError("Node cache was produced by a different tree")
    d1 = node.split[0]
    grad_a1, grad_o2, own = affine_backward(node.s_net, node.t_net, cache.affine, g[:, d1:], gld)
    left_buffers, right_buffers = [], []
    if node.left is not None:
        grad_left, left_buffers = _node_backward(node.left, cache.left, g[:, :d1], gld)
    else:
        grad_left = g[:, :d1]
    if node.right is not None:
        grad_a2, right_buffers = _node_backward(node.right, cache.right, grad_o2, gld)
    else:
        grad_a2 = grad_o2
    grad_mixed = np.concatenate([grad_left + grad_a1, grad_a2], axis=1)
    return householder_apply_adjoint(node.Q, grad_mixed), [own] + left_buffers + right_buffers


def hint_layer_forward(tree: SplitTree, u: np.ndarray):
    x, single = as_batch(u, tree.dim)
    v, logdet, cache = _node_forward(tree, x)
    return restore(v, single), (logdet[0] if single else logdet), cache


def hint_layer_inverse(tree: SplitTree, v: np.ndarray) -> np.ndarray:
    y, single = as_batch(v, tree.dim)
    return restore(_node_inverse(tree, y), single)


def hint_layer_backward(tree: SplitTree, cache: NodeCache, grad_v: np.ndarray, grad_logdet) -> Tuple[np.ndarray, GradientBuffer]:
    g, single = as_batch(grad_v, tree.dim, "output gradient")
    if g.shape[0] != cache.x.shape[0]:
        raise CacheMismatchError("Gradient batch size does not match the cached forward pass")
    grad_u, buffers = _node_backward(tree, cache, g, per_row(grad_logdet, g.shape[0]))
    merged = GradientBuffer()
    for buffer in buffers:
        merged.extend(buffer)
    return restore(grad_u, single), merged


@dataclass
class HintMap:
    layers: List[SplitTree]
    dim_y: int
    dim_x: int
    kr_enforced: bool = True

    def __post_init__(self):
        if not self.layers:
            raise DimensionError("HintMap needs at least one layer")
        for tree in self.layers:
            if tree.dim != self.dim:
                raise DimensionError("All layers of a HintMap must share its dimension")
            if self.kr_enforced and (tree.split != (self.dim_y, self.dim_x) or tree.Q.count != 0):
                raise DimensionError("KR-enforced layers need root split (m | d) and an identity root Q")

    @property
    def dim(self) -> int:
        return self.dim_y + self.dim_x

    def parameters(self) -> List[np.ndarray]:
        params = []
        for tree in self.layers:
            params.extend(tree.parameters())
        return params

    def forward(self, w):
        return hint_forward(self, w)

    def inverse(self, z):
        return hint_inverse(self, z)

    def backward(self, caches, grad_z, grad_logdet):
        return hint_backward(self, caches, grad_z, grad_logdet)


@dataclass
class HintCache:
    map_id: int
    layer_caches: List[NodeCache]
    single: bool


def hint_forward(hmap: HintMap, w: np.ndarray):
    x, single = as_batch(w, hmap.dim)
    total = np.zeros(x.shape[0])
    caches = []
    for tree in hmap.layers:
        x, logdet, cache = hint_layer_forward(tree, x)
        total = total + logdet
        caches.append(cache)
    return restore(x, single), (total[0] if single else total), HintCache(id(hmap), caches, single)


def hint_inverse(hmap: HintMap, z: np.ndarray) -> np.ndarray:
    y, single = as_batch(z, hmap.dim)
    for tree in reversed(hmap.layers):
        y = hint_layer_inverse(tree, y)
    return restore(y, single)


def hint_backward(hmap: HintMap, caches: HintCache, grad_z: np.ndarray, grad_logdet) -> Tuple[np.ndarray, GradientBuffer]:
    if caches.map_id != id(hmap) or len(caches.layer_caches) != len(hmap.layers):
        raise CacheMismatchError("Caches were produced by a different map")
    g, _ = as_batch(grad_z, hmap.dim, "output gradient")
    per_layer = []
    for tree, cache in zip(reversed(hmap.layers), reversed(caches.layer_caches)):
        g, grads = hint_layer_backward(tree, cache, g, grad_logdet)
        per_layer.append(grads)
    buffer = GradientBuffer()
    for grads in reversed(per_layer):
        buffer.extend(grads)
    return restore(g, caches.single), buffer


def marginal_forward_y(hmap: HintMap, y: np.ndarray) -> np.ndarray:
    """T^y(y): only the y-branch (left subtree of every root) is evaluated"""
    if not hmap.kr_enforced:
        raise DimensionError("marginal_forward_y requires a KR-enforced map")
    x, single = as_batch(y, hmap.dim_y, "observation")
    for tree in hmap.layers:
        if tree.left is not None:
            x, _, _ = _node_forward(tree.left, x)
    return restore(x, single)


def build_hint_map(dim_y: int, dim_x: int, arch: ArchitectureConfig, rng: np.random.Generator, kr_enforced: bool = True) -> HintMap:
    layers = [build_split_tree(dim_y, dim_x, arch.depth, rng, arch, kr_enforced) for _ in range(arch.n_layers)]
    hmap = HintMap(layers, dim_y, dim_x, kr_enforced)
    logger.info(
        f"Built HINT map: m={dim_y}, d={dim_x}, layers={len(layers)}, "
        f"H={layers[0].H}, parameters={sum(p.size for p in hmap.parameters())}"
    )
    return hmap
