"""GMF global ranker: sigmoid(h . (p_u * q_i)) trained with BCE on sampled negatives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .data import ImplicitDataset, _id_sort_key
from .errors import CapacityError, DimensionError, FormatError, LookupFailure, EmptyDatasetError
from .numerics import AdamHyper, Parameter, adam_step, derive_seed, glorot_init, sigmoid


@dataclass
class RankedList:
    user_id: str
    items: list[str]
    scores: list[float]

    def __len__(self) -> int:
        return len(self.items)

    def check(self) -> None:
        if len(set(self.items)) != len(self.items):
            raise ValueError(f"ranked list for {self.user_id} repeats items")
        if len(self.scores) != len(self.items):
            raise ValueError(f"ranked list for {self.user_id} has {len(self.scores)} scores for {len(self.items)} items")
        if any(a < b for a, b in zip(self.scores, self.scores[1:])):
            raise ValueError(f"ranked list for {self.user_id} is not sorted by score")


@dataclass
class GmfModel:
    users: list[str]
    items: list[str]
    P: Parameter
    Q: Parameter
    h: Parameter

    def __post_init__(self) -> None:
        self._user_row = {u: k for k, u in enumerate(self.users)}
        self._item_row = {i: k for k, i in enumerate(self.items)}

    @property
    def dim(self) -> int:
        return self.P.shape[1]

    def user_row(self, user: str) -> int:
        try:
            return self._user_row[user]
        except KeyError:
            raise LookupFailure(f"user {user!r} is not registered in the GMF model") from None

    def item_row(self, item: str) -> int:
        try:
            return self._item_row[item]
        except KeyError:
            raise LookupFailure(f"item {item!r} is not registered in the GMF model") from None

    def parameters(self) -> list[Parameter]:
        return [self.P, self.Q, self.h]

    def scores_for(self, user: str) -> np.ndarray:
        p = self.P.value[self.user_row(user)]
        return sigmoid(self.Q.value @ (self.h.value[:, 0] * p))


def gmf_score(p, q, h) -> float:
    p, q, h = (np.asarray(v, dtype=np.float64).reshape(-1) for v in (p, q, h))
    if not (p.shape == q.shape == h.shape):
        raise DimensionError(f"gmf_score needs equal dimensions, got {p.shape}, {q.shape}, {h.shape}")
    return float(sigmoid(np.array([np.sum(h * p * q)]))[0])


def init_gmf(users: Sequence[str], items: Sequence[str], d: int, seed: int) -> GmfModel:
    return GmfModel(
        list(users),
        list(items),
        Parameter("gmf.P", glorot_init(len(users), d, derive_seed(seed, "gmf.P"))),
        Parameter("gmf.Q", glorot_init(len(items), d, derive_seed(seed, "gmf.Q"))),
        Parameter("gmf.h", glorot_init(d, 1, derive_seed(seed, "gmf.h"))),
    )


def sample_training_pairs(ds: ImplicitDataset, users: Sequence[str], neg_per_pos: int, seed: int):
    """Positives of ``users`` plus ``neg_per_pos`` uniform non-positive items each (sampled once)."""
    rng = np.random.default_rng(seed)
    item_row = ds.item_index()
    user_row = ds.user_index()
    n_items = len(ds.items)
    u_idx, i_idx, labels = [], [], []
    for u in users:
        pos = sorted((item_row[i] for i in ds.positives[u]))
        pos_set = set(pos)
        for i in pos:
            u_idx.append(user_row[u])
            i_idx.append(i)
            labels.append(1.0)
            if len(pos_set) == n_items:
                continue
            drawn = 0
            while drawn < neg_per_pos:
                j = int(rng.integers(n_items))
                if j in pos_set:
                    continue
                u_idx.append(user_row[u])
                i_idx.append(j)
                labels.append(0.0)
                drawn += 1
    return np.array(u_idx, dtype=np.int64), np.array(i_idx, dtype=np.int64), np.array(labels)


def bce_loss(model: GmfModel, u_idx, i_idx, labels) -> float:
    z = (model.P.value[u_idx] * model.Q.value[i_idx]) @ model.h.value[:, 0]
    # log(1 + e^-|z|) form keeps large logits finite
    log1p = np.log1p(np.exp(-np.abs(z)))
    loss = np.maximum(z, 0) - z * labels + log1p
    return float(loss.mean())


def train_gmf(
    ds: ImplicitDataset,
    d: int = 32,
    epochs: int = 50,
    lr: float = 0.01,
    neg_per_pos: int = 4,
    seed: int = 0,
    split: str | None = "train",
    history: list | None = None,
    l2: float = 0.0,
) -> GmfModel:
    """Full-batch Adam on BCE over a fixed sample of positives and negatives.

    Only users in ``split`` contribute training pairs (all users when the dataset
    has no split assignment or ``split`` is None); every user still gets a
    latent row so cold-start users can be scored.
    """
    if split is not None and ds.split_assignment:
        train_users = ds.users_in(split)
    else:
        train_users = list(ds.users)
    if not train_users or not any(ds.positives[u] for u in train_users):
        raise EmptyDatasetError("no positives available to train GMF")
    model = init_gmf(ds.users, ds.items, d, seed)
    u_idx, i_idx, labels = sample_training_pairs(ds, train_users, neg_per_pos, derive_seed(seed, "gmf.negatives"))
    hyper = AdamHyper(lr=lr)
    n = float(len(labels))
    for _ in range(epochs):
        p = model.P.value[u_idx]
        q = model.Q.value[i_idx]
        hv = model.h.value[:, 0]
        z = (p * q) @ hv
        dz = (sigmoid(z) - labels) / n
        if history is not None:
            history.append(bce_loss(model, u_idx, i_idx, labels))
        np.add.at(model.P.grad, u_idx, dz[:, None] * (hv * q))
        np.add.at(model.Q.grad, i_idx, dz[:, None] * (hv * p))
        model.h.grad[:, 0] += (dz[:, None] * p * q).sum(axis=0)
        if l2 > 0.0:
            for param in model.parameters():
                param.grad += l2 * param.value
        for param in model.parameters():
            adam_step(param, hyper)
    if history is not None:
        history.append(bce_loss(model, u_idx, i_idx, labels))
    return model


def initial_list(model: GmfModel, user: str, n: int, exclude: Iterable[str] | None = None) -> RankedList:
    """Top-n items by GMF score; ties go to the lower item id."""
    scores = model.scores_for(user)
    excluded = set(exclude or ())
    eligible = [k for k, item in enumerate(model.items) if item not in excluded]
    if n > len(eligible):
        raise CapacityError(f"list length {n} exceeds the {len(eligible)} eligible items for user {user}")
    eligible.sort(key=lambda k: (-scores[k], _id_sort_key(model.items[k])))
    top = eligible[:n]
    return RankedList(user, [model.items[k] for k in top], [float(scores[k]) for k in top])


# -------------------------------------------------------------- list files

LIST_HEADER = "user_id\titem_id\tscore"


def write_lists(path, lists: Iterable[RankedList]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(LIST_HEADER + "\n")
        for rl in lists:
            for item, score in zip(rl.items, rl.scores):
                fh.write(f"{rl.user_id}\t{item}\t{score!r}\n")


def read_lists(path) -> dict[str, RankedList]:
    out: dict[str, RankedList] = {}
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != LIST_HEADER:
            raise FormatError(f"{path}: missing header {LIST_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields")
            user, item, score = parts
            rl = out.setdefault(user, RankedList(user, [], []))
            rl.items.append(item)
            rl.scores.append(float(score))
    return out

