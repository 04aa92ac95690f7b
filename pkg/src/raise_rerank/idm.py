"""Intention discovering module: co-attention between a user's and an item's reviews.

The single-pair functions (``match_scores``, ``refine``, ``aggregate``,
``idm_forward``) follow the definitions entry by entry. ``CoAttention.forward``
is the batched path used for training: it handles B users with n candidate
items each and has a hand-written backward.

Normalisers in the refinement step count real (unmasked) reviews only, and
every score touching a padded review is forced to zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import PaddedReviews
from .errors import ConfigError, DimensionError
from .layers import Mlp
from .numerics import Parameter, derive_seed, glorot_init, matmul, relu, relu_backward

VARIANTS = ("bilinear", "soft", "mlp")
AGGREGATIONS = ("sum", "mean")


@dataclass
class MatchMatrix:
    C: np.ndarray  # l_u x l_i
    user_mask: np.ndarray
    item_mask: np.ndarray


def _safe_inverse(counts: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    return np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)


class CoAttention:
    """Parameters of one co-attention variant plus the batched forward/backward."""

    def __init__(self, d: int, variant: str = "bilinear", encoder_layers: int = 2, seed: int = 0, prefix: str = "idm") -> None:
        if variant not in VARIANTS:
            raise ConfigError(f"co-attention variant must be one of {VARIANTS}, got {variant!r}")
        if not 1 <= encoder_layers <= 4:
            raise ConfigError(f"encoder depth must be in [1, 4], got {encoder_layers}")
        self.d = d
        self.variant = variant
        self.M = None
        self.f_user = self.f_item = self.f_pair = None
        if variant in ("bilinear", "soft"):
            self.f_user = Mlp(f"{prefix}.f_user", [d] * (encoder_layers + 1), seed)
            self.f_item = Mlp(f"{prefix}.f_item", [d] * (encoder_layers + 1), seed)
        if variant == "bilinear":
            self.M = Parameter(f"{prefix}.M", glorot_init(d, d, derive_seed(seed, f"{prefix}.M")))
        if variant == "mlp":
            self.f_pair = Mlp(f"{prefix}.f_pair", [2 * d, d, 1], seed)

    def parameters(self) -> list[Parameter]:
        params = []
        if self.f_user is not None:
            params += self.f_user.parameters() + self.f_item.parameters()
        if self.M is not None:
            params.append(self.M)
        if self.f_pair is not None:
            params += self.f_pair.parameters()
        return params

    # ---------------------------------------------------------- batched path

    def scores(self, Ru, mu, Ri, mi):
        """Masked matching scores, shape (B, n, l_u, l_i), plus a backward cache.

        Ru: (B, l_u, d) user reviews, mu: (B, l_u) mask;
        Ri: (B, n, l_i, d) candidate item reviews, mi: (B, n, l_i).
        """
        mask2 = mu[:, None, :, None] * mi[:, :, None, :]
        if self.variant == "mlp":
            (W1, b1), (W2, b2) = self.f_pair.layers
            d = self.d
            zu = matmul(Ru, W1.value[:d])  # (B, l_u, h)
            zi = matmul(Ri, W1.value[d:])  # (B, n, l_i, h)
            z = zu[:, None, :, None, :] + zi[:, :, None, :, :] + b1.value[0]
            hid = relu(z)
            raw = matmul(hid, W2.value)[..., 0] + b2.value[0, 0]
            return raw * mask2, ("mlp", Ru, Ri, z, hid, mask2)
        Fu, cu = self.f_user.forward(Ru)
        Fi, ci = self.f_item.forward(Ri)
        G = matmul(Fu, self.M.value) if self.variant == "bilinear" else Fu
        raw = matmul(G[:, None], np.swapaxes(Fi, -1, -2))
        return raw * mask2, (self.variant, Fu, cu, Fi, ci, G, mask2)

    def scores_backward(self, cache, dC: np.ndarray) -> None:
        if cache[0] == "mlp":
            _, Ru, Ri, z, hid, mask2 = cache
            (W1, b1), (W2, b2) = self.f_pair.layers
            d = self.d
            dC = dC * mask2
            b2.grad[0, 0] += dC.sum()
            W2.grad[:, 0] += np.einsum("bnklh,bnkl->h", hid, dC)
            dz = relu_backward(z, dC[..., None] * W2.value[:, 0])
            b1.grad[0] += dz.sum(axis=(0, 1, 2, 3))
            dzu = dz.sum(axis=(1, 3))  # (B, l_u, h)
            dzi = dz.sum(axis=2)  # (B, n, l_i, h)
            W1.grad[:d] += Ru.reshape(-1, d).T @ dzu.reshape(-1, dzu.shape[-1])
            W1.grad[d:] += Ri.reshape(-1, d).T @ dzi.reshape(-1, dzi.shape[-1])
            return
        variant, Fu, cu, Fi, ci, G, mask2 = cache
        dC = dC * mask2
        dFi = np.swapaxes(dC, -1, -2) @ G[:, None]  # (B, n, l_i, d)
        dG = np.einsum("bnkl,bnld->bkd", dC, Fi)
        if variant == "bilinear":
            self.M.grad += np.einsum("bki,bkj->ij", Fu, dG)
            dFu = dG @ self.M.value.T
        else:
            dFu = dG
        self.f_user.backward(cu, dFu)
        self.f_item.backward(ci, dFi)

    def forward(self, Ru, mu, Ri, mi, mode: str = "sum"):
        """Intention-aware representations r_u, r_i of shape (B, n, d) and the score tensor."""
        if mode not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {mode!r}")
        C, score_cache = self.scores(Ru, mu, Ri, mi)
        inv_cu = _safe_inverse(mu.sum(axis=-1))  # (B,)
        inv_ci = _safe_inverse(mi.sum(axis=-1))  # (B, n)
        su = C.sum(axis=-1) * inv_ci[:, :, None]  # (B, n, l_u)
        si = C.sum(axis=-2) * inv_cu[:, None, None]  # (B, n, l_i)
        r_u = np.einsum("bnk,bkd->bnd", su, Ru)
        r_i = np.einsum("bnj,bnjd->bnd", si, Ri)
        if mode == "mean":
            r_u = r_u * inv_cu[:, None, None]
            r_i = r_i * inv_ci[:, :, None]
        return r_u, r_i, C, (score_cache, Ru, Ri, inv_cu, inv_ci, mode)

    def backward(self, cache, dr_u: np.ndarray, dr_i: np.ndarray) -> None:
        score_cache, Ru, Ri, inv_cu, inv_ci, mode = cache
        if mode == "mean":
            dr_u = dr_u * inv_cu[:, None, None]
            dr_i = dr_i * inv_ci[:, :, None]
        dsu = np.einsum("bnd,bkd->bnk", dr_u, Ru)
        dsi = np.einsum("bnd,bnjd->bnj", dr_i, Ri)
        dC = (dsu * inv_ci[:, :, None])[..., None] + (dsi * inv_cu[:, None, None])[:, :, None, :]
        self.scores_backward(score_cache, dC)


# -------------------------------------------------------------- single-pair ops

def encode_review(enc: Mlp, r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    if r.shape[-1] != enc.dims[0]:
        raise DimensionError(f"encoder expects width {enc.dims[0]}, got {r.shape[-1]}")
    return enc(r.reshape(1, -1))[0] if r.ndim == 1 else enc(r)


def match_scores(params: CoAttention, Ru: PaddedReviews, Ri: PaddedReviews) -> MatchMatrix:
    lu, li = Ru.matrix.shape[0], Ri.matrix.shape[0]
    if Ru.matrix.shape[1] != params.d or Ri.matrix.shape[1] != params.d:
        raise DimensionError(f"review width must be {params.d}")
    C = np.zeros((lu, li))
    if params.variant == "mlp":
        if params.f_pair is None:
            raise ConfigError("mlp co-attention requires a pair encoder")
        for k in range(lu):
            for j in range(li):
                if Ru.mask[k] and Ri.mask[j]:
                    pair = np.concatenate([Ru.matrix[k], Ri.matrix[j]])
                    C[k, j] = params.f_pair(pair[None, :])[0, 0]
    else:
        if params.f_user is None or (params.variant == "bilinear" and params.M is None):
            raise ConfigError(f"{params.variant} co-attention is missing parameters")
        fu = params.f_user(Ru.matrix)
        fi = params.f_item(Ri.matrix)
        M = params.M.value if params.variant == "bilinear" else np.eye(params.d)
        for k in range(lu):
            for j in range(li):
                if Ru.mask[k] and Ri.mask[j]:
                    C[k, j] = fu[k] @ M @ fi[j]
    return MatchMatrix(C, Ru.mask.copy(), Ri.mask.copy())


def refine(C: MatchMatrix, Ru: PaddedReviews, Ri: PaddedReviews) -> tuple[PaddedReviews, PaddedReviews]:
    """Scale each user review by the mean of its score row, each item review by its column mean."""
    lu, li = C.C.shape
    ru = np.zeros_like(Ru.matrix)
    ri = np.zeros_like(Ri.matrix)
    if Ri.real_count > 0:
        for k in range(lu):
            ru[k] = (C.C[k].sum() / Ri.real_count) * Ru.matrix[k]
    if Ru.real_count > 0:
        for j in range(li):
            ri[j] = (C.C[:, j].sum() / Ru.real_count) * Ri.matrix[j]
    return (
        PaddedReviews(ru, Ru.mask.copy(), Ru.real_count),
        PaddedReviews(ri, Ri.mask.copy(), Ri.real_count),
    )


def aggregate(Ru_refined: PaddedReviews, Ri_refined: PaddedReviews, mode: str = "sum") -> tuple[np.ndarray, np.ndarray]:
    if mode not in AGGREGATIONS:
        raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {mode!r}")
    out = []
    for side in (Ru_refined, Ri_refined):
        total = side.matrix.sum(axis=0)
        if mode == "mean":
            total = total / side.real_count if side.real_count else np.zeros_like(total)
        out.append(total)
    return out[0], out[1]


def idm_forward(params: CoAttention, user_reviews: PaddedReviews, item_reviews: PaddedReviews, mode: str = "sum"):
    C = match_scores(params, user_reviews, item_reviews)
    ru_ref, ri_ref = refine(C, user_reviews, item_reviews)
    r_u, r_i = aggregate(ru_ref, ri_ref, mode)
    return r_u, r_i, C
