"""Dense float64 linear algebra, the seeded generator, Adam and a gradient oracle.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. Functions here
accept stacked (batched) arrays wherever the trailing two axes form the matrix.

Seeded generator
----------------
Parameter initialisation uses xoshiro256** so that another implementation can
reproduce initial weights bit for bit. The state is four 64-bit words seeded
by splitmix64::

    splitmix64:  z = (x += 0x9E3779B97F4A7C15)
                 z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
                 z = (z ^ (z >> 27)) * 0x94D049BB133111EB
                 return z ^ (z >> 31)

    next():      result = rotl(s1 * 5, 7) * 9
                 t  = s1 << 17
                 s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
                 s2 ^= t;  s3 = rotl(s3, 45)

A uniform double in [0, 1) is ``(next() >> 11) * 2**-53``. All arithmetic is
modulo 2**64.
"""

from __future__ import annotations

import math
import zlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from .errors import DimensionError, NumericError

MASK64 = (1 << 64) - 1


# -------------------------------------------------------------- madd counting

class MaddCounter:
    """Tally of scalar multiply-adds performed while the counter is active."""

    def __init__(self) -> None:
        self.total = 0


_active_counter: MaddCounter | None = None


@contextmanager
def count_madds() -> Iterator[MaddCounter]:
    """Count every multiply-add issued through :func:`matmul` / :func:`weighted_sum`.

    Single-threaded only: the active counter is module global.
    """
    global _active_counter
    previous = _active_counter
    counter = MaddCounter()
    _active_counter = counter
    try:
        yield counter
    finally:
        _active_counter = previous


def _tally(n: int) -> None:
    if _active_counter is not None:
        _active_counter.total += int(n)


# -------------------------------------------------------------- core ops

def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product over the trailing two axes (leading axes broadcast)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}")
    out = a @ b
    _tally(out.size * a.shape[-1])
    return out


def weighted_sum(weights: np.ndarray, stack: np.ndarray) -> np.ndarray:
    """``sum_t weights[..., t] * stack[t]`` for a stack of t equal-shape matrices.

    ``weights`` may carry leading batch axes; the result has shape
    ``weights.shape[:-1] + stack.shape[1:]``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    stack = np.asarray(stack, dtype=np.float64)
    if weights.shape[-1] != stack.shape[0]:
        raise DimensionError(
            f"mixing weights of length {weights.shape[-1]} do not match {stack.shape[0]} matrices"
        )
    out = np.tensordot(weights, stack, axes=([-1], [0]))
    _tally(out.size * stack.shape[0])
    return out


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax along the last axis, shifted by the row max."""
    m = np.asarray(m, dtype=np.float64)
    z = np.exp(m - m.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def softmax_rows_backward(y: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the softmax input, given the softmax output ``y``."""
    return y * (dy - (dy * y).sum(axis=-1, keepdims=True))


def relu(m: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(m, dtype=np.float64), 0.0)


def relu_backward(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # derivative at exactly 0 is 0
    return dy * (x > 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -------------------------------------------------------------- seeded generator

def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step. Returns (new_state, output)."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** generator (see module docstring for the exact recurrences)."""

    def __init__(self, seed: int) -> None:
        state = int(seed) & MASK64
        words = []
        for _ in range(4):
            state, out = splitmix64(state)
            words.append(out)
        self.s = words

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniforms(self, count: int) -> np.ndarray:
        return np.array([self.uniform() for _ in range(count)], dtype=np.float64)

    def normals(self, count: int) -> np.ndarray:
        """Standard normals via Box-Muller, consuming two uniforms per pair."""
        out = np.empty(count, dtype=np.float64)
        i = 0
        while i < count:
            u1 = self.uniform()
            u2 = self.uniform()
            r = math.sqrt(-2.0 * math.log(1.0 - u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < count:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
            i += 2
        return out


def derive_seed(seed: int, name: str) -> int:
    """Mix a base seed with a tensor name into a new 64-bit seed."""
    _, out = splitmix64((int(seed) & MASK64) ^ (zlib.crc32(name.encode("utf-8")) << 32))
    return out


def glorot_init(rows: int, cols: int, seed: int) -> np.ndarray:
    """Uniform Glorot matrix drawn from the xoshiro256** stream of ``seed``."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"glorot_init needs positive shape, got ({rows}, {cols})")
    limit = math.sqrt(6.0 / (rows + cols))
    u = Xoshiro256(seed).uniforms(rows * cols)
    return (-limit + 2.0 * limit * u).reshape(rows, cols)


# -------------------------------------------------------------- parameters & Adam

@dataclass
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_m: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0

    def __post_init__(self) -> None:
        self.value = np.array(self.value, dtype=np.float64)
        if self.value.ndim != 2:
            raise DimensionError(f"parameter {self.name} must be 2-D, got shape {self.value.shape}")
        for attr in ("grad", "adam_m", "adam_v"):
            if getattr(self, attr) is None:
                setattr(self, attr, np.zeros_like(self.value))

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def copy(self) -> "Parameter":
        return Parameter(
            self.name,
            self.value.copy(),
            self.grad.copy(),
            self.adam_m.copy(),
            self.adam_v.copy(),
            self.step_count,
        )


@dataclass(frozen=True)
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(p: Parameter, h: AdamHyper) -> Parameter:
    """Bias-corrected Adam update in place; zeroes the gradient afterwards."""
    g = p.grad
    if not np.all(np.isfinite(g)):
        raise NumericError(f"non-finite gradient in parameter {p.name!r}")
    p.step_count += 1
    p.adam_m *= h.beta1
    p.adam_m += (1.0 - h.beta1) * g
    p.adam_v *= h.beta2
    p.adam_v += (1.0 - h.beta2) * (g * g)
    m_hat = p.adam_m / (1.0 - h.beta1 ** p.step_count)
    v_hat = p.adam_v / (1.0 - h.beta2 ** p.step_count)
    p.value -= h.lr * m_hat / (np.sqrt(v_hat) + h.eps)
    p.zero_grad()
    return p


def finite_diff_grad(loss: Callable[[Parameter], float], p: Parameter, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss`` w.r.t. every entry of ``p.value``."""
    grad = np.zeros_like(p.value)
    flat = p.value.reshape(-1)
    out = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + eps
        up = float(loss(p))
        flat[idx] = orig - eps
        down = float(loss(p))
        flat[idx] = orig
        if not (math.isfinite(up) and math.isfinite(down)):
            raise NumericError(f"non-finite loss while differencing {p.name!r}[{idx}]")
        out[idx] = (up - down) / (2.0 * eps)
    return grad
