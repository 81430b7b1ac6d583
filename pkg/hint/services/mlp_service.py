"""Fully connected subnetworks with leaky-ReLU hidden layers and explicit backprop."""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from hint.errors import CacheMismatchError, DimensionError
from hint.services.numerics_service import as_batch, restore

logger = logging.getLogger(__name__)


@dataclass
class DenseNet:
    layer_widths: List[int]
    weights: List[np.ndarray]
    biases: List[np.ndarray]
    leaky_slope: float = 0.01
    output_clamp: Optional[float] = None

    def __post_init__(self):
        if len(self.weights) != len(self.layer_widths) - 1 or len(self.biases) != len(self.weights):
            raise DimensionError("DenseNet needs one weight matrix and bias per layer transition")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            expected = (self.layer_widths[k + 1], self.layer_widths[k])
            if W.shape != expected or b.shape != (expected[0],):
                raise DimensionError(f"Layer {k} has weight {W.shape} / bias {b.shape}, expected {expected}")

    @property
    def dim_in(self) -> int:
        return self.layer_widths[0]

    @property
    def dim_out(self) -> int:
        return self.layer_widths[-1]

    def parameters(self) -> List[np.ndarray]:
        """W_0, b_0, W_1, b_1, ... (live arrays, updated in place by the optimizer)"""
        params = []
        for W, b in zip(self.weights, self.biases):
            params.extend([W, b])
        return params


@dataclass
class ForwardCache:
    net_id: int
    inputs: List[np.ndarray]
    pre_activations: List[np.ndarray]
    output: np.ndarray
    single: bool


@dataclass
class GradientBuffer:
    """Accumulators aligned one-to-one with a parameter list"""

    arrays: List[np.ndarray] = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray]) -> "GradientBuffer":
        return cls([np.zeros_like(p) for p in params])

    def extend(self, other: "GradientBuffer") -> "GradientBuffer":
        self.arrays.extend(other.arrays)
        return self

    def add_(self, other: "GradientBuffer") -> "GradientBuffer":
        if len(other.arrays) != len(self.arrays):
            raise DimensionError("Cannot merge gradient buffers of different layouts")
        for mine, theirs in zip(self.arrays, other.arrays):
            mine += theirs
        return self

    def flat(self) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self.arrays])


def leaky_relu(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def mlp_init(widths: Sequence[int], leaky_slope: float, clamp: Optional[float], rng: np.random.Generator) -> DenseNet:
    """Kaiming-normal weights N(0, 2/fan_in), zero biases"""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise DimensionError(f"MLP widths must have length >= 2 and be positive, got {widths}")
    if not 0.0 < leaky_slope < 1.0:
        raise ValueError("leaky_slope must lie in (0, 1)")
    if clamp is not None and clamp <= 0:
        raise ValueError("output clamp must be positive")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(widths, weights, biases, leaky_slope, clamp)


def mlp_forward(net: DenseNet, u: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    x, single = as_batch(u, net.dim_in, "MLP input")
    inputs, pre = [], []
    last = len(net.weights) - 1
    for k, (W, b) in enumerate(zip(net.weights, net.biases)):
        inputs.append(x)
        z = x @ W.T + b
        pre.append(z)
        x = leaky_relu(z, net.leaky_slope) if k < last else z
    if net.output_clamp is not None:
        c = net.output_clamp
        # tanh rounds to 1 for large arguments; keep outputs strictly inside (-c, c)
        bound = np.nextafter(c, 0.0)
        x = np.clip(c * np.tanh(x / c), -bound, bound)
    cache = ForwardCache(id(net), inputs, pre, x, single)
    return restore(x, single), cache


def mlp_backward(net: DenseNet, cache: ForwardCache, grad_out: np.ndarray) -> Tuple[np.ndarray, GradientBuffer]:
    """Gradient of sum(grad_out * output) w.r.t. the input and every parameter"""
    if cache.net_id != id(net) or len(cache.pre_activations) != len(net.weights):
        raise CacheMismatchError("ForwardCache was produced by a different network")
    g, _ = as_batch(grad_out, net.dim_out, "MLP output gradient")
    if g.shape[0] != cache.output.shape[0]:
        raise CacheMismatchError("Output gradient batch size does not match the cached forward pass")
    if net.output_clamp is not None:
        c = net.output_clamp
        # d/dz c tanh(z/c) = 1 - tanh^2(z/c)
        g = g * (1.0 - (cache.output / c) ** 2)
    grads_w = [None] * len(net.weights)
    grads_b = [None] * len(net.weights)
    last = len(net.weights) - 1
    for k in range(last, -1, -1):
        if k < last:
            g = g * np.where(cache.pre_activations[k] > 0, 1.0, net.leaky_slope)
        grads_w[k] = g.T @ cache.inputs[k]
        grads_b[k] = g.sum(axis=0)
        g = g @ net.weights[k]
    buffer = GradientBuffer()
    for gw, gb in zip(grads_w, grads_b):
        buffer.arrays.extend([gw, gb])
    return restore(g, cache.single), buffer
