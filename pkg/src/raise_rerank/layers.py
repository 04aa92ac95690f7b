"""Small differentiable building blocks shared by the co-attention and encoder code.

Each forward returns ``(output, cache)``; the matching backward consumes the
cache, accumulates parameter gradients into ``Parameter.grad`` and returns the
gradient w.r.t. the input.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError
from .numerics import Parameter, derive_seed, glorot_init, matmul, relu, relu_backward

LN_EPS = 1e-5


def _flat(x: np.ndarray) -> np.ndarray:
    return x.reshape(-1, x.shape[-1])


class Mlp:
    """ReLU MLP with a linear final layer. Weights are stored input-major (in x out)."""

    def __init__(self, name: str, dims: list[int], seed: int) -> None:
        if len(dims) < 2:
            raise DimensionError(f"MLP {name} needs at least an input and output width")
        self.name = name
        self.dims = list(dims)
        self.layers: list[tuple[Parameter, Parameter]] = []
        for k in range(len(dims) - 1):
            w_name, b_name = f"{name}.{k}.W", f"{name}.{k}.b"
            W = Parameter(w_name, glorot_init(dims[k], dims[k + 1], derive_seed(seed, w_name)))
            b = Parameter(b_name, np.zeros((1, dims[k + 1])))
            self.layers.append((W, b))

    @property
    def depth(self) -> int:
        return len(self.layers)

    def parameters(self) -> list[Parameter]:
        return [p for pair in self.layers for p in pair]

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.dims[0]:
            raise DimensionError(f"MLP {self.name} expects width {self.dims[0]}, got {x.shape[-1]}")
        acts, pre = [x], []
        h = x
        last = len(self.layers) - 1
        for k, (W, b) in enumerate(self.layers):
            z = matmul(h, W.value) + b.value[0]
            pre.append(z)
            h = relu(z) if k < last else z
            acts.append(h)
        return h, (acts, pre)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache, dout: np.ndarray) -> np.ndarray:
        acts, pre = cache
        dh = dout
        last = len(self.layers) - 1
        for k in range(last, -1, -1):
            W, b = self.layers[k]
            dz = dh if k == last else relu_backward(pre[k], dh)
            W.grad += _flat(acts[k]).T @ _flat(dz)
            b.grad[0] += _flat(dz).sum(axis=0)
            dh = dz @ W.value.T
        return dh


class LayerNorm:
    def __init__(self, name: str, d: int) -> None:
        self.gain = Parameter(f"{name}.gain", np.ones((1, d)))
        self.bias = Parameter(f"{name}.bias", np.zeros((1, d)))

    def parameters(self) -> list[Parameter]:
        return [self.gain, self.bias]

    def forward(self, x: np.ndarray):
        mu = x.mean(axis=-1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
        sigma = np.sqrt(var + LN_EPS)
        xhat = (x - mu) / sigma
        return xhat * self.gain.value[0] + self.bias.value[0], (xhat, sigma)

    def backward(self, cache, dy: np.ndarray) -> np.ndarray:
        xhat, sigma = cache
        self.gain.grad[0] += _flat(dy * xhat).sum(axis=0)
        self.bias.grad[0] += _flat(dy).sum(axis=0)
        g = dy * self.gain.value[0]
        return (g - g.mean(axis=-1, keepdims=True) - xhat * (g * xhat).mean(axis=-1, keepdims=True)) / sigma


def dropout_mask(shape, rate: float, rng: np.random.Generator | None) -> np.ndarray | None:
    """Inverted-dropout multiplier, or None when dropout is inactive."""
    if rate <= 0.0 or rng is None:
        return None
    return (rng.random(shape) >= rate) / (1.0 - rate)
