"""Attention machinery: static and multi-head self-attention, the intention gate,
expert mixing, dynamic self-attention, the encoder block and the cost model.

Matrices act on row vectors (``S @ W``) except the gate, whose weights follow
the column convention ``W_E @ x`` / ``W_A @ e``. All public functions accept a
leading batch axis on ``S``; mixing weights then carry the same batch axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import LayerNorm, dropout_mask
from .numerics import (
    Parameter,
    count_madds,
    derive_seed,
    glorot_init,
    matmul,
    relu,
    relu_backward,
    softmax_rows,
    softmax_rows_backward,
    weighted_sum,
)


# -------------------------------------------------------------- self-attention

def _attention_forward(S, W_Q, W_K, W_V):
    if S.shape[-1] != W_Q.shape[-2] or W_Q.shape[-1] != W_K.shape[-1]:
        raise DimensionError(f"attention shapes do not compose: S {S.shape}, W_Q {W_Q.shape}, W_K {W_K.shape}")
    Q = matmul(S, W_Q)
    K = matmul(S, W_K)
    V = matmul(S, W_V)
    scale = 1.0 / math.sqrt(W_Q.shape[-1])
    A = softmax_rows(matmul(Q, np.swapaxes(K, -1, -2)) * scale)
    return matmul(A, V), (S, Q, K, V, A, scale)


def _attention_backward(cache, W_Q, W_K, W_V, dout):
    """Returns (dS, dW_Q, dW_K, dW_V); weight grads keep the batch axis of S."""
    S, Q, K, V, A, scale = cache
    dA = dout @ np.swapaxes(V, -1, -2)
    dV = np.swapaxes(A, -1, -2) @ dout
    dscores = softmax_rows_backward(A, dA) * scale
    dQ = dscores @ K
    dK = np.swapaxes(dscores, -1, -2) @ Q
    St = np.swapaxes(S, -1, -2)
    dW_Q, dW_K, dW_V = St @ dQ, St @ dK, St @ dV
    dS = dQ @ np.swapaxes(W_Q, -1, -2) + dK @ np.swapaxes(W_K, -1, -2) + dV @ np.swapaxes(W_V, -1, -2)
    return dS, dW_Q, dW_K, dW_V


def self_attention(S, W_Q, W_K, W_V) -> np.ndarray:
    """softmax(S W_Q (S W_K)^T / sqrt(d_k)) S W_V."""
    S = np.asarray(S, dtype=np.float64)
    return _attention_forward(S, np.asarray(W_Q, float), np.asarray(W_K, float), np.asarray(W_V, float))[0]


@dataclass
class StaticAttentionParams:
    W_Q: np.ndarray
    W_K: np.ndarray
    W_V: np.ndarray
    heads: int = 1
    W_O: np.ndarray | None = None

    @classmethod
    def random(cls, d: int, heads: int, seed: int) -> "StaticAttentionParams":
        if heads < 1 or d % heads:
            raise ConfigError(f"number of heads ({heads}) must divide d ({d})")
        mats = [glorot_init(d, d, derive_seed(seed, name)) for name in ("W_Q", "W_K", "W_V", "W_O")]
        return cls(mats[0], mats[1], mats[2], heads, mats[3])


def multi_head(S, params: StaticAttentionParams) -> np.ndarray:
    """Concat of per-head attention over column blocks of W_Q/W_K/W_V, projected by W_O."""
    S = np.asarray(S, dtype=np.float64)
    d = S.shape[-1]
    h = params.heads
    if h < 1 or d % h:
        raise ConfigError(f"number of heads ({h}) must divide d ({d})")
    dk = d // h
    heads = []
    for i in range(h):
        cols = slice(i * dk, (i + 1) * dk)
        heads.append(self_attention(S, params.W_Q[:, cols], params.W_K[:, cols], params.W_V[:, cols]))
    W_O = params.W_O if params.W_O is not None else np.eye(d)
    return matmul(np.concatenate(heads, axis=-1), W_O)


# -------------------------------------------------------------- gate & experts

class IntentionGate:
    """a = softmax(W_A relu(W_E x + b_E) + b_A) with x = p_bar * q_bar."""

    def __init__(self, d: int, t: int, seed: int, prefix: str = "gate") -> None:
        self.W_E = Parameter(f"{prefix}.W_E", glorot_init(d, d, derive_seed(seed, f"{prefix}.W_E")))
        self.b_E = Parameter(f"{prefix}.b_E", np.zeros((1, d)))
        self.W_A = Parameter(f"{prefix}.W_A", glorot_init(t, d, derive_seed(seed, f"{prefix}.W_A")))
        self.b_A = Parameter(f"{prefix}.b_A", np.zeros((1, t)))

    @property
    def t(self) -> int:
        return self.W_A.shape[0]

    def parameters(self) -> list[Parameter]:
        return [self.W_E, self.b_E, self.W_A, self.b_A]

    def forward(self, x: np.ndarray):
        if x.shape[-1] != self.W_E.shape[1]:
            raise DimensionError(f"gate expects width {self.W_E.shape[1]}, got {x.shape[-1]}")
        z = matmul(x, self.W_E.value.T) + self.b_E.value[0]
        e = relu(z)
        a = softmax_rows(matmul(e, self.W_A.value.T) + self.b_A.value[0])
        return a, (x, z, e, a)

    def backward(self, cache, da: np.ndarray) -> np.ndarray:
        x, z, e, a = cache
        dlogits = softmax_rows_backward(a, da)
        self.W_A.grad += dlogits.T @ e
        self.b_A.grad[0] += dlogits.sum(axis=0)
        dz = relu_backward(z, dlogits @ self.W_A.value)
        self.W_E.grad += dz.T @ x
        self.b_E.grad[0] += dz.sum(axis=0)
        return dz @ self.W_E.value


def intention_gate(gate: IntentionGate, p_bar, q_bar) -> np.ndarray:
    p_bar = np.asarray(p_bar, dtype=np.float64)
    q_bar = np.asarray(q_bar, dtype=np.float64)
    if p_bar.shape != q_bar.shape:
        raise DimensionError(f"p_bar {p_bar.shape} and q_bar {q_bar.shape} differ")
    x = (p_bar * q_bar).reshape(-1, p_bar.shape[-1])
    a = gate.forward(x)[0]
    return a[0] if p_bar.ndim == 1 else a


class ExpertBank:
    """t candidate (W_Q, W_K, W_V) triples, each d x d."""

    def __init__(self, d: int, t: int, seed: int, prefix: str = "experts") -> None:
        self.experts = {
            kind: [
                Parameter(f"{prefix}.{kind}.{k}", glorot_init(d, d, derive_seed(seed, f"{prefix}.{kind}.{k}")))
                for k in range(t)
            ]
            for kind in ("q", "k", "v")
        }

    @classmethod
    def from_matrices(cls, W_Q, W_K, W_V, prefix: str = "experts") -> "ExpertBank":
        bank = cls.__new__(cls)
        bank.experts = {
            kind: [Parameter(f"{prefix}.{kind}.{k}", m) for k, m in enumerate(mats)]
            for kind, mats in (("q", W_Q), ("k", W_K), ("v", W_V))
        }
        return bank

    @property
    def t(self) -> int:
        return len(self.experts["q"])

    def parameters(self) -> list[Parameter]:
        return [p for kind in ("q", "k", "v") for p in self.experts[kind]]

    def stack(self, kind: str) -> np.ndarray:
        return np.stack([p.value for p in self.experts[kind]])

    def backward(self, a: np.ndarray, dW: dict[str, np.ndarray]) -> np.ndarray:
        """Accumulate expert grads from per-example mixed-matrix grads; return d a."""
        da = np.zeros_like(a)
        for kind in ("q", "k", "v"):
            g = dW[kind]  # (B, d, d)
            stack = self.stack(kind)
            da += np.einsum("bij,tij->bt", g, stack)
            contrib = np.einsum("bt,bij->tij", a, g)
            for k, p in enumerate(self.experts[kind]):
                p.grad += contrib[k]
        return da


def mix_experts(a, bank: ExpertBank):
    """(W_Q^u, W_K^u, W_V^u) = sum_t a_t W_t for each of the three kinds."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[-1] != bank.t:
        raise DimensionError(f"mixing weights have length {a.shape[-1]}, bank holds {bank.t} experts")
    return tuple(weighted_sum(a, bank.stack(kind)) for kind in ("q", "k", "v"))


def dynamic_self_attention(S, a, bank: ExpertBank) -> np.ndarray:
    W_Q, W_K, W_V = mix_experts(a, bank)
    return self_attention(S, W_Q, W_K, W_V)


# -------------------------------------------------------------- encoder block

class EncoderBlock:
    """Post-LN block: LN(S + drop(attn)) then LN(x + drop(FFN)), FFN width 4d."""

    def __init__(self, d: int, t: int, seed: int, prefix: str = "block0", bank: ExpertBank | None = None, dropout: float = 0.0) -> None:
        self.prefix = prefix
        self.bank = bank if bank is not None else ExpertBank(d, t, seed, f"{prefix}.experts")
        self.owns_bank = bank is None
        self.ffn_w1 = Parameter(f"{prefix}.ffn_w1", glorot_init(d, 4 * d, derive_seed(seed, f"{prefix}.ffn_w1")))
        self.ffn_b1 = Parameter(f"{prefix}.ffn_b1", np.zeros((1, 4 * d)))
        self.ffn_w2 = Parameter(f"{prefix}.ffn_w2", glorot_init(4 * d, d, derive_seed(seed, f"{prefix}.ffn_w2")))
        self.ffn_b2 = Parameter(f"{prefix}.ffn_b2", np.zeros((1, d)))
        self.ln1 = LayerNorm(f"{prefix}.ln1", d)
        self.ln2 = LayerNorm(f"{prefix}.ln2", d)
        self.dropout_rate = dropout

    def parameters(self) -> list[Parameter]:
        own = [self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2] + self.ln1.parameters() + self.ln2.parameters()
        return (self.bank.parameters() if self.owns_bank else []) + own

    def forward(self, S: np.ndarray, a: np.ndarray, training: bool = False, rng: np.random.Generator | None = None):
        """S: (B, n, d); a: (B, t)."""
        W_Q, W_K, W_V = mix_experts(a, self.bank)
        att, att_cache = _attention_forward(S, W_Q, W_K, W_V)
        rate = self.dropout_rate if training else 0.0
        m1 = dropout_mask(att.shape, rate, rng)
        if m1 is not None:
            att = att * m1
        x1, ln1_cache = self.ln1.forward(S + att)
        pre = matmul(x1, self.ffn_w1.value) + self.ffn_b1.value[0]
        hid = relu(pre)
        ffn = matmul(hid, self.ffn_w2.value) + self.ffn_b2.value[0]
        m2 = dropout_mask(ffn.shape, rate, rng)
        if m2 is not None:
            ffn = ffn * m2
        out, ln2_cache = self.ln2.forward(x1 + ffn)
        return out, (a, (W_Q, W_K, W_V), att_cache, m1, ln1_cache, x1, pre, hid, m2, ln2_cache)

    def __call__(self, S, a, training: bool = False, rng=None) -> np.ndarray:
        return self.forward(S, a, training, rng)[0]

    def backward(self, cache, dout: np.ndarray):
        """Returns (dS, da)."""
        a, mixed, att_cache, m1, ln1_cache, x1, pre, hid, m2, ln2_cache = cache
        d2 = self.ln2.backward(ln2_cache, dout)
        dffn = d2 if m2 is None else d2 * m2
        self.ffn_w2.grad += hid.reshape(-1, hid.shape[-1]).T @ dffn.reshape(-1, dffn.shape[-1])
        self.ffn_b2.grad[0] += dffn.reshape(-1, dffn.shape[-1]).sum(axis=0)
        dpre = relu_backward(pre, dffn @ self.ffn_w2.value.T)
        self.ffn_w1.grad += x1.reshape(-1, x1.shape[-1]).T @ dpre.reshape(-1, dpre.shape[-1])
        self.ffn_b1.grad[0] += dpre.reshape(-1, dpre.shape[-1]).sum(axis=0)
        dx1 = d2 + dpre @ self.ffn_w1.value.T
        d1 = self.ln1.backward(ln1_cache, dx1)
        datt = d1 if m1 is None else d1 * m1
        dS_att, dWq, dWk, dWv = _attention_backward(att_cache, *mixed, datt)
        da = self.bank.backward(a, {"q": dWq, "k": dWk, "v": dWv})
        return d1 + dS_att, da


def encoder_block(S, a, block: EncoderBlock, training: bool = False, rng=None) -> np.ndarray:
    S = np.asarray(S, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    if S.ndim == 2:
        return block(S[None], a.reshape(1, -1), training, rng)[0]
    return block(S, a, training, rng)


# -------------------------------------------------------------- cost model

MECHANISMS = ("static", "multihead", "dynamic")


@dataclass(frozen=True)
class MechanismCost:
    attn_madds: int
    extra_madds: int
    params: int
    extra_params: int


@dataclass(frozen=True)
class CostBreakdown:
    n: int
    d: int
    t: int
    h: int
    b: int
    static: MechanismCost
    multihead: MechanismCost
    dynamic: MechanismCost

    def rows(self):
        return [(m, getattr(self, m)) for m in MECHANISMS]

    def to_tsv(self) -> str:
        lines = ["mechanism\tattn_madds\textra_madds\tparams"]
        for name, c in self.rows():
            lines.append(f"{name}\t{c.attn_madds}\t{c.extra_madds}\t{c.params}")
        return "\n".join(lines) + "\n"


def cost_report(n: int, d: int, t: int, h: int = 1, b: int = 1) -> CostBreakdown:
    """Closed-form multiply-add and parameter counts for b attention sublayers.

    static    3nd^2 (projections) + 2n^2 d (scores and weighted sum)
    multihead static + nd^2 (output projection)
    dynamic   static + 3td^2 (mixing three d x d matrices from t experts)
    Softmax and the 1/sqrt(d_k) scaling are not multiply-adds and are ignored.
    """
    if min(n, d, t, h, b) < 1:
        raise ConfigError("cost_report arguments must all be >= 1")
    if d % h:
        raise ConfigError(f"number of heads ({h}) must divide d ({d})")
    core = 3 * n * d * d + 2 * n * n * d
    static = MechanismCost(b * core, 0, b * 3 * d * d, 0)
    multihead = MechanismCost(b * (core + n * d * d), b * n * d * d, b * 4 * d * d, b * d * d)
    dynamic = MechanismCost(b * (core + 3 * t * d * d), b * 3 * t * d * d, b * 3 * t * d * d, b * 3 * (t - 1) * d * d)
    return CostBreakdown(n, d, t, h, b, static, multihead, dynamic)


def instrumented_costs(n: int, d: int, t: int, h: int = 1, b: int = 1, seed: int = 0) -> dict[str, int]:
    """Multiply-adds actually issued by the attention forward code, per mechanism."""
    if d % h:
        raise ConfigError(f"number of heads ({h}) must divide d ({d})")
    rng = np.random.default_rng(seed)
    S = rng.standard_normal((n, d))
    static = StaticAttentionParams.random(d, h, seed)
    bank = ExpertBank(d, t, seed)
    a = np.full(t, 1.0 / t)
    out = {}
    with count_madds() as c:
        for _ in range(b):
            self_attention(S, static.W_Q, static.W_K, static.W_V)
    out["static"] = c.total
    with count_madds() as c:
        for _ in range(b):
            multi_head(S, static)
    out["multihead"] = c.total
    with count_madds() as c:
        for _ in range(b):
            dynamic_self_attention(S, a, bank)
    out["dynamic"] = c.total
    return out
