"""Full re-ranker: review co-attention -> item sequence -> dynamic encoders -> list softmax.

Batched tensors carry a leading list axis B and a candidate axis n. The
single-example functions at the bottom (``item_repr``, ``build_sequence``,
``list_context``, ``forward``, ``rerank``, ``explain``) wrap the batched path.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

from .base_ranker import GmfModel, RankedList
from .checkpoint import load_checkpoint, save_checkpoint
from .data import PaddedReviews, ReviewStore, padded_batch, pad_review_sequence
from .dte import EncoderBlock, ExpertBank, IntentionGate
from .errors import CapacityError, ConfigError, DataError, ExplanationUnavailable, FormatError
from .eval import map_at_k
from .idm import AGGREGATIONS, VARIANTS, CoAttention, match_scores
from .layers import Mlp
from .numerics import AdamHyper, Parameter, adam_step, derive_seed, glorot_init, matmul, softmax_rows

log = logging.getLogger(__name__)

ABLATIONS = ("full", "no_idm", "no_dte", "no_both", "no_user_reviews", "no_item_reviews")
ALLOWED_T = (1, 2, 4, 8, 10)
ALLOWED_B = (1, 2, 3, 5, 8, 10)
LOG_FLOOR = 1e-12


@dataclass
class RaiseConfig:
    d: int = 32
    n: int = 50
    t: int = 4
    b: int = 1
    l_u: int = 20
    l_i: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    dropout: float = 0.1
    epochs: int = 50
    seed: int = 0
    co_att: str = "bilinear"
    aggregation: str = "sum"
    ablation: str = "full"
    shared_experts: bool = False
    mlp_layers: int = 2
    finetune_base: bool = False

    def validate(self) -> "RaiseConfig":
        if self.t not in ALLOWED_T:
            raise ConfigError(f"t must be one of {ALLOWED_T}, got {self.t}")
        if self.b not in ALLOWED_B:
            raise ConfigError(f"b must be one of {ALLOWED_B}, got {self.b}")
        for name in ("d", "n", "l_u", "l_i", "batch_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if not (self.dropout == 0.0 or 0.1 - 1e-12 <= self.dropout <= 0.5 + 1e-12):
            raise ConfigError(f"dropout must lie in [0.1, 0.5] ∪ {{0}}, got {self.dropout}")
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.co_att not in VARIANTS:
            raise ConfigError(f"co_att must be one of {VARIANTS}, got {self.co_att!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ConfigError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if not 1 <= self.mlp_layers <= 4:
            raise ConfigError(f"mlp_layers must be in [1, 4], got {self.mlp_layers}")
        return self

    @property
    def use_dte(self) -> bool:
        return self.ablation not in ("no_dte", "no_both")

    @property
    def review_mode(self) -> str | None:
        """'coatt', 'user_only', 'item_only' or None (no review stream)."""
        return {
            "full": "coatt",
            "no_dte": "coatt",
            "no_idm": None,
            "no_both": None,
            "no_user_reviews": "item_only",
            "no_item_reviews": "user_only",
        }[self.ablation]

    def replace(self, **changes) -> "RaiseConfig":
        return RaiseConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **changes})


# -------------------------------------------------------------- batched inputs

@dataclass
class ListBatchExample:
    user_id: str
    list: RankedList
    labels: np.ndarray
    user_reviews: PaddedReviews
    item_reviews: list[PaddedReviews]


@dataclass
class ListTensors:
    """Stacked inputs for a set of lists (one per user)."""

    users: list[str]
    lists: list[RankedList]
    p_rows: np.ndarray  # (N,)
    q_rows: np.ndarray  # (N, n)
    Ru: np.ndarray  # (N, l_u, d)
    mu: np.ndarray  # (N, l_u)
    Ri: np.ndarray  # (N, n, l_i, d)
    mi: np.ndarray  # (N, n, l_i)
    labels: np.ndarray  # (N, n)

    def __len__(self) -> int:
        return len(self.users)

    def subset(self, idx) -> "ListTensors":
        idx = np.asarray(idx, dtype=np.int64)
        return ListTensors(
            [self.users[k] for k in idx],
            [self.lists[k] for k in idx],
            self.p_rows[idx],
            self.q_rows[idx],
            self.Ru[idx],
            self.mu[idx],
            self.Ri[idx],
            self.mi[idx],
            self.labels[idx],
        )


def build_list_tensors(
    lists: Sequence[RankedList],
    positives: Mapping[str, set],
    reviews: ReviewStore,
    gmf: GmfModel,
    config: RaiseConfig,
) -> ListTensors:
    """Stack lists with their labels (list items the user has rated) and padded reviews."""
    n = config.n
    for rl in lists:
        if len(rl.items) < n:
            raise CapacityError(f"list for user {rl.user_id} has {len(rl.items)} items, need {n}")
    if reviews.dim != config.d:
        raise DataError(f"review embeddings have dim {reviews.dim}, model expects {config.d}")
    users = [rl.user_id for rl in lists]
    trimmed = [RankedList(rl.user_id, rl.items[:n], rl.scores[:n]) for rl in lists]
    p_rows = np.array([gmf.user_row(u) for u in users], dtype=np.int64)
    q_rows = np.array([[gmf.item_row(i) for i in rl.items] for rl in trimmed], dtype=np.int64).reshape(len(trimmed), n)
    labels = np.array(
        [[1.0 if i in positives.get(rl.user_id, ()) else 0.0 for i in rl.items] for rl in trimmed]
    ).reshape(len(trimmed), n)
    Ru, mu = padded_batch(reviews, "user", users, config.l_u)
    item_mats, item_mask = padded_batch(reviews, "item", gmf.items, config.l_i)
    return ListTensors(users, trimmed, p_rows, q_rows, Ru, mu, item_mats[q_rows], item_mask[q_rows], labels)


def tensors_from_examples(examples: Sequence[ListBatchExample], gmf: GmfModel) -> ListTensors:
    return ListTensors(
        [ex.user_id for ex in examples],
        [ex.list for ex in examples],
        np.array([gmf.user_row(ex.user_id) for ex in examples], dtype=np.int64),
        np.array([[gmf.item_row(i) for i in ex.list.items] for ex in examples], dtype=np.int64),
        np.stack([ex.user_reviews.matrix for ex in examples]),
        np.stack([ex.user_reviews.mask for ex in examples]),
        np.stack([np.stack([r.matrix for r in ex.item_reviews]) for ex in examples]),
        np.stack([np.stack([r.mask for r in ex.item_reviews]) for ex in examples]),
        np.stack([np.asarray(ex.labels, dtype=np.float64) for ex in examples]),
    )


def make_example(
    user: str, rl: RankedList, positives: Mapping[str, set], reviews: ReviewStore, config: RaiseConfig
) -> ListBatchExample:
    labels = np.array([1.0 if i in positives.get(user, ()) else 0.0 for i in rl.items])
    return ListBatchExample(
        user,
        rl,
        labels,
        pad_review_sequence(reviews, user, config.l_u, "user"),
        [pad_review_sequence(reviews, i, config.l_i, "item") for i in rl.items],
    )


# -------------------------------------------------------------- model

class RaiseModel:
    def __init__(self, config: RaiseConfig, gmf: GmfModel) -> None:
        config.validate()
        if gmf.dim != config.d:
            raise ConfigError(f"GMF latent dim {gmf.dim} differs from d={config.d}")
        self.config = config
        self.gmf = gmf
        d, n, seed = config.d, config.n, config.seed
        mode = config.review_mode
        self.idm = CoAttention(d, config.co_att, config.mlp_layers, seed) if mode == "coatt" else None
        self.W_S = Parameter("W_S", glorot_init(2 * d, d, derive_seed(seed, "W_S")))
        self.positions = Parameter("positions", glorot_init(n, d, derive_seed(seed, "positions")))
        self.f_im = Mlp("f_im", [2 * d] + [d] * config.mlp_layers, seed)
        self.f_re = Mlp("f_re", [2 * d] + [d] * config.mlp_layers, seed) if mode is not None else None
        t_eff = config.t if config.use_dte else 1
        self.gate = IntentionGate(d, config.t, seed) if config.use_dte else None
        self.shared_bank = ExpertBank(d, t_eff, seed, "experts") if config.shared_experts else None
        self.blocks = [
            EncoderBlock(d, t_eff, seed, f"blocks.{k}", bank=self.shared_bank, dropout=config.dropout)
            for k in range(config.b)
        ]
        self.W_P = Parameter("W_P", glorot_init(d, 1, derive_seed(seed, "W_P")))
        self.b_P = Parameter("b_P", np.zeros((1, 1)))

    # ---------------------------------------------------------- parameter sets

    def own_parameters(self) -> list[Parameter]:
        params = []
        if self.idm is not None:
            params += self.idm.parameters()
        params += [self.W_S, self.positions] + self.f_im.parameters()
        if self.f_re is not None:
            params += self.f_re.parameters()
        if self.gate is not None:
            params += self.gate.parameters()
        if self.shared_bank is not None:
            params += self.shared_bank.parameters()
        for blk in self.blocks:
            params += blk.parameters()
        return params + [self.W_P, self.b_P]

    def parameters(self) -> list[Parameter]:
        """Trainable parameters; GMF latents only when fine-tuning the base ranker."""
        extra = self.gmf.parameters() if self.config.finetune_base else []
        return extra + self.own_parameters()

    def all_tensors(self) -> list[Parameter]:
        return self.gmf.parameters() + self.own_parameters()

    def zero_grad(self) -> None:
        for p in self.all_tensors():
            p.zero_grad()

    # ---------------------------------------------------------- forward

    def _review_streams(self, batch: ListTensors):
        B, n = batch.q_rows.shape
        d = self.config.d
        mode = self.config.review_mode
        zeros = np.zeros((B, n, d))
        if mode == "coatt":
            return self.idm.forward(batch.Ru, batch.mu, batch.Ri, batch.mi, self.config.aggregation)
        mean = self.config.aggregation == "mean"
        if mode == "user_only":
            r_u = batch.Ru.sum(axis=1)
            if mean:
                cnt = batch.mu.sum(axis=1)
                r_u = np.divide(r_u, cnt[:, None], out=np.zeros_like(r_u), where=cnt[:, None] > 0)
            return np.broadcast_to(r_u[:, None, :], (B, n, d)).copy(), zeros, None, None
        if mode == "item_only":
            r_i = batch.Ri.sum(axis=2)
            if mean:
                cnt = batch.mi.sum(axis=2)
                r_i = np.divide(r_i, cnt[..., None], out=np.zeros_like(r_i), where=cnt[..., None] > 0)
            return zeros, r_i, None, None
        return zeros, zeros.copy(), None, None

    def encode(self, batch: ListTensors):
        """Item sequence S (B, n, d) and gate input pieces; returns (S, p_bar, q_bar, cache)."""
        d = self.config.d
        P = self.gmf.P.value[batch.p_rows]
        Qm = self.gmf.Q.value[batch.q_rows]
        B, n, _ = Qm.shape
        r_u, r_i, C, idm_cache = self._review_streams(batch)
        pq = np.concatenate([np.broadcast_to(P[:, None, :], (B, n, d)), Qm], axis=-1)
        s_im, im_cache = self.f_im.forward(pq)
        if self.f_re is not None:
            s_re, re_cache = self.f_re.forward(np.concatenate([r_u, r_i], axis=-1))
        else:
            s_re, re_cache = np.zeros((B, n, d)), None
        cat = np.concatenate([s_im, s_re], axis=-1)
        S = matmul(cat, self.W_S.value) + self.positions.value
        p_bar = P + r_u.mean(axis=1)
        q_bar = (Qm + r_i).mean(axis=1)
        return S, p_bar, q_bar, (P, Qm, r_u, r_i, C, idm_cache, im_cache, re_cache, cat)

    def forward_batch(self, batch: ListTensors, training: bool = False, rng: np.random.Generator | None = None):
        """Logits (B, n) and the full cache for ``backward``."""
        S, p_bar, q_bar, enc_cache = self.encode(batch)
        B = S.shape[0]
        if self.gate is not None:
            a, gate_cache = self.gate.forward(p_bar * q_bar)
        else:
            a, gate_cache = np.ones((B, 1)), None
        F = S
        block_caches = []
        for blk in self.blocks:
            F, c = blk.forward(F, a, training, rng)
            block_caches.append(c)
        logits = matmul(F, self.W_P.value)[..., 0] + self.b_P.value[0, 0]
        return logits, (enc_cache, p_bar, q_bar, a, gate_cache, block_caches, F)

    def scores(self, batch: ListTensors) -> np.ndarray:
        return softmax_rows(self.forward_batch(batch)[0])

    # ---------------------------------------------------------- loss & backward

    def loss_and_backward(self, batch: ListTensors, training: bool = False, rng=None, backward: bool = True):
        """Summed list-wise NLL over the batch; accumulates grads. Returns (loss, clamp_count)."""
        logits, cache = self.forward_batch(batch, training, rng)
        log_scores = logits - logits.max(axis=1, keepdims=True)
        log_scores = log_scores - np.log(np.exp(log_scores).sum(axis=1, keepdims=True))
        clamped = log_scores < np.log(LOG_FLOOR)
        y = batch.labels
        clamp_count = int((clamped & (y > 0)).sum())
        loss = float(-(y * np.where(clamped, np.log(LOG_FLOOR), log_scores)).sum())
        if backward:
            y_eff = np.where(clamped, 0.0, y)
            probs = np.exp(log_scores)
            dlogits = probs * y_eff.sum(axis=1, keepdims=True) - y_eff
            self.backward(cache, dlogits, batch)
        return loss, clamp_count

    def backward(self, cache, dlogits: np.ndarray, batch: ListTensors) -> None:
        enc_cache, p_bar, q_bar, a, gate_cache, block_caches, F = cache
        P, Qm, r_u, r_i, C, idm_cache, im_cache, re_cache, cat = enc_cache
        d = self.config.d
        B, n = dlogits.shape
        self.W_P.grad[:, 0] += np.einsum("bnd,bn->d", F, dlogits)
        self.b_P.grad[0, 0] += dlogits.sum()
        dF = dlogits[..., None] * self.W_P.value[:, 0]
        da = np.zeros_like(a)
        for blk, c in zip(reversed(self.blocks), reversed(block_caches)):
            dF, da_blk = blk.backward(c, dF)
            da += da_blk
        dS = dF
        dP = np.zeros((B, d))
        dQ = np.zeros((B, n, d))
        dr_u = np.zeros((B, n, d))
        dr_i = np.zeros((B, n, d))
        if self.gate is not None:
            dx = self.gate.backward(gate_cache, da)
            dp_bar = dx * q_bar
            dq_bar = dx * p_bar
            dP += dp_bar
            dr_u += dp_bar[:, None, :] / n
            dQ += dq_bar[:, None, :] / n
            dr_i += dq_bar[:, None, :] / n
        self.positions.grad += dS.sum(axis=0)
        self.W_S.grad += cat.reshape(-1, 2 * d).T @ dS.reshape(-1, d)
        dcat = dS @ self.W_S.value.T
        dpq = self.f_im.backward(im_cache, dcat[..., :d])
        dP += dpq[..., :d].sum(axis=1)
        dQ += dpq[..., d:]
        if self.f_re is not None:
            drr = self.f_re.backward(re_cache, dcat[..., d:])
            dr_u += drr[..., :d]
            dr_i += drr[..., d:]
        if idm_cache is not None:
            self.idm.backward(idm_cache, dr_u, dr_i)
        if self.config.finetune_base:
            np.add.at(self.gmf.P.grad, batch.p_rows, dP)
            np.add.at(self.gmf.Q.grad, batch.q_rows.reshape(-1), dQ.reshape(-1, d))

    # ---------------------------------------------------------- checkpoints

    def state(self) -> list[tuple[str, np.ndarray]]:
        return [(p.name, p.value) for p in self.all_tensors()]

    def save(self, path) -> None:
        c = self.config
        save_checkpoint(path, {"d": c.d, "n": c.n, "t": c.t, "b": c.b, "l_u": c.l_u, "l_i": c.l_i}, self.state())

    def load_state(self, tensors: Mapping[str, np.ndarray]) -> None:
        params = {p.name: p for p in self.all_tensors()}
        unknown = sorted(set(tensors) - set(params))
        if unknown:
            raise FormatError(f"checkpoint holds unknown tensors: {', '.join(unknown)}")
        missing = sorted(set(params) - set(tensors))
        if missing:
            raise FormatError(f"checkpoint lacks tensors: {', '.join(missing)}")
        for name, value in tensors.items():
            if params[name].shape != value.shape:
                raise FormatError(f"tensor {name} has shape {value.shape}, model expects {params[name].shape}")
            params[name].value[...] = value

    @classmethod
    def load(cls, path, config: RaiseConfig, gmf: GmfModel) -> "RaiseModel":
        header, tensors = load_checkpoint(path)
        for key in ("d", "n", "t", "b", "l_u", "l_i"):
            if header[key] != getattr(config, key):
                raise FormatError(f"checkpoint {key}={header[key]} does not match config {key}={getattr(config, key)}")
        model = cls(config, copy.deepcopy(gmf))
        model.load_state(tensors)
        return model


# -------------------------------------------------------------- training

@dataclass
class EpochStats:
    epoch: int
    train_nll: float
    val_map5: float | None
    clamped: int


@dataclass
class TrainResult:
    history: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0


def nll_loss(scores, labels) -> float:
    """-sum_j labels_j * log(scores_j), scores floored at 1e-12."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(-(labels * np.log(np.maximum(scores, LOG_FLOOR))).sum())


def dataset_nll(model: RaiseModel, data: ListTensors, batch_size: int = 64) -> float:
    total = 0.0
    for start in range(0, len(data), batch_size):
        loss, _ = model.loss_and_backward(data.subset(range(start, min(start + batch_size, len(data)))), backward=False)
        total += loss
    return total


def validation_map(model: RaiseModel, data: ListTensors, positives: Mapping[str, set], k: int = 5, batch_size: int = 64) -> float:
    if len(data) == 0:
        return 0.0
    values = []
    for start in range(0, len(data), batch_size):
        part = data.subset(range(start, min(start + batch_size, len(data))))
        for rl in rerank_batch(model, part):
            rel = positives.get(rl.user_id, set())
            if rel:
                values.append(map_at_k(rl.items, rel, k))
    return float(np.mean(values)) if values else 0.0


def train(
    model: RaiseModel,
    train_data: ListTensors,
    val_data: ListTensors | None = None,
    val_positives: Mapping[str, set] | None = None,
    epochs: int | None = None,
    track_train_nll: bool = True,
) -> TrainResult:
    """Mini-batch Adam over per-user lists; restores the parameters with the best val MAP@5."""
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    if len(train_data) == 0:
        raise DataError("no training lists")
    rng = np.random.default_rng(derive_seed(cfg.seed, "train"))
    hyper = AdamHyper(lr=cfg.lr)
    trainable = model.parameters()
    result = TrainResult()
    use_val = val_data is not None and len(val_data) > 0 and val_positives is not None

    def snapshot():
        return [p.value.copy() for p in model.all_tensors()]

    def stats(epoch, clamped):
        nll = dataset_nll(model, train_data) if track_train_nll else float("nan")
        vmap = validation_map(model, val_data, val_positives) if use_val else None
        return EpochStats(epoch, nll, vmap, clamped)

    first = stats(0, 0)
    result.history.append(first)
    best_map, best_state = first.val_map5, snapshot()
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(train_data))
        clamped = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = train_data.subset(order[start : start + cfg.batch_size])
            model.zero_grad()
            _, c = model.loss_and_backward(batch, training=True, rng=rng)
            clamped += c
            for p in trainable:
                adam_step(p, hyper)
        st = stats(epoch, clamped)
        result.history.append(st)
        log.debug("epoch %d train_nll=%.4f val_map5=%s", epoch, st.train_nll, st.val_map5)
        if use_val and st.val_map5 > best_map:
            best_map, best_state, result.best_epoch = st.val_map5, snapshot(), epoch
    if use_val:
        for p, value in zip(model.all_tensors(), best_state):
            p.value[...] = value
    else:
        result.best_epoch = epochs
    model.zero_grad()
    return result


# -------------------------------------------------------------- inference

def _order(scores: np.ndarray) -> list[int]:
    # stable: equal scores keep their original list position
    return sorted(range(len(scores)), key=lambda j: (-scores[j], j))


def rerank_batch(model: RaiseModel, batch: ListTensors) -> list[RankedList]:
    scores = model.scores(batch)
    out = []
    for rl, s in zip(batch.lists, scores):
        order = _order(s)
        out.append(RankedList(rl.user_id, [rl.items[j] for j in order], [float(s[j]) for j in order]))
    return out


def rerank_all(model: RaiseModel, data: ListTensors, batch_size: int = 64) -> dict[str, RankedList]:
    out = {}
    for start in range(0, len(data), batch_size):
        for rl in rerank_batch(model, data.subset(range(start, min(start + batch_size, len(data))))):
            out[rl.user_id] = rl
    return out


def _single(model: RaiseModel, example: ListBatchExample) -> ListTensors:
    if len(example.list.items) != model.config.n:
        raise CapacityError(f"list for user {example.user_id} has {len(example.list.items)} items, need {model.config.n}")
    return tensors_from_examples([example], model.gmf)


def item_repr(p_u, q_i, r_u, r_i, model: RaiseModel, position: int) -> np.ndarray:
    """s = W_S^T [f_im(p_u, q_i); f_re(r_u, r_i)] + o_position (s_re = 0 without the review stream)."""
    if not 0 <= position < model.config.n:
        raise IndexError(f"position {position} outside list length {model.config.n}")
    s_im = model.f_im(np.concatenate([p_u, q_i])[None, :])[0]
    if model.f_re is not None:
        s_re = model.f_re(np.concatenate([r_u, r_i])[None, :])[0]
    else:
        s_re = np.zeros(model.config.d)
    return np.concatenate([s_im, s_re]) @ model.W_S.value + model.positions.value[position]


def build_sequence(example: ListBatchExample, model: RaiseModel) -> np.ndarray:
    return model.encode(_single(model, example))[0][0]


def list_context(example: ListBatchExample, model: RaiseModel) -> tuple[np.ndarray, np.ndarray]:
    _, p_bar, q_bar, _ = model.encode(_single(model, example))
    return p_bar[0], q_bar[0]


def forward(example: ListBatchExample, model: RaiseModel, training: bool = False, rng=None) -> np.ndarray:
    logits, _ = model.forward_batch(_single(model, example), training, rng)
    return softmax_rows(logits)[0]


def rerank(model: RaiseModel, example: ListBatchExample) -> RankedList:
    return rerank_batch(model, _single(model, example))[0]


@dataclass
class Explanation:
    user_id: str
    item_id: str
    pairs: list[tuple[int, int, float]]


def explain(model: RaiseModel, reviews: ReviewStore, user, item, top_m: int = 5) -> Explanation:
    """Top matched (user review k, item review j) pairs by raw co-attention score."""
    if model.idm is None:
        raise ExplanationUnavailable(f"ablation {model.config.ablation!r} has no co-attention module")
    for kind, entity in (("user", user), ("item", item)):
        if reviews.count(kind, entity) == 0:
            raise ExplanationUnavailable(f"{kind} {entity} has no reviews")
    Ru = pad_review_sequence(reviews, user, model.config.l_u, "user")
    Ri = pad_review_sequence(reviews, item, model.config.l_i, "item")
    C = match_scores(model.idm, Ru, Ri).C
    pairs = [
        (k, j, float(C[k, j]))
        for k in range(Ru.real_count)
        for j in range(Ri.real_count)
    ]
    pairs.sort(key=lambda p: (-p[2], p[0], p[1]))
    return Explanation(str(user), str(item), pairs[:top_m])
