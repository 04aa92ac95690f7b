"""End-to-end experiment steps shared by the CLI and the acceptance suite.

The base ranker can be fit on a per-user fraction of the positives
(``holdout`` > 0). Those "known" positives are then optionally excluded from
the initial lists, and the remaining positives become the re-ranking labels
and evaluation targets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .base_ranker import GmfModel, RankedList, initial_list, train_gmf
from .data import ImplicitDataset, ReviewStore, SPLITS, _id_sort_key, binarize, split_users
from .errors import ConfigError
from .eval import DEFAULT_KS, MetricTable, evaluate
from .model import RaiseConfig, RaiseModel, TrainResult, build_list_tensors, rerank_all, train
from .numerics import derive_seed


@dataclass
class BaseSettings:
    epochs: int = 100
    lr: float = 0.01
    neg_per_pos: int = 4
    l2: float = 0.0
    holdout: float = 0.0
    split: str | None = None


def prepare_dataset(interactions, seed: int, min_interactions: int = 0) -> ImplicitDataset:
    return split_users(binarize(interactions, min_interactions), (0.8, 0.1, 0.1), seed)


def holdout_positives(ds: ImplicitDataset, fraction: float, seed: int) -> dict[str, set]:
    """Per-user subset of positives the base ranker is allowed to see.

    A user with k positives keeps round((1 - fraction) * k) of them, at least
    one, and at most k - 1 when k > 1 and fraction > 0. ``fraction=0`` keeps all.
    """
    if not 0.0 <= fraction < 1.0:
        raise ConfigError(f"holdout must lie in [0, 1), got {fraction}")
    if fraction == 0.0:
        return {u: set(ds.positives[u]) for u in ds.users}
    rng = np.random.default_rng(derive_seed(seed, "holdout"))
    known = {}
    for u in ds.users:
        pos = sorted(ds.positives[u], key=_id_sort_key)
        if len(pos) <= 1:
            known[u] = set(pos)
            continue
        keep = min(len(pos) - 1, max(1, int(round((1.0 - fraction) * len(pos)))))
        picked = rng.permutation(len(pos))[:keep]
        known[u] = {pos[j] for j in picked}
    return known


def targets(ds: ImplicitDataset, known: Mapping[str, set], exclude_known: bool) -> dict[str, set]:
    """Relevance sets: all positives, or only those the base ranker never saw."""
    if not exclude_known:
        return {u: set(ds.positives[u]) for u in ds.users}
    return {u: set(ds.positives[u]) - set(known.get(u, ())) for u in ds.users}


def fit_base(ds: ImplicitDataset, d: int, seed: int, settings: BaseSettings, known: Mapping[str, set] | None = None) -> GmfModel:
    train_ds = ds
    if known is not None:
        train_ds = ImplicitDataset(ds.users, ds.items, {u: set(known.get(u, ())) for u in ds.users}, ds.split_assignment)
    return train_gmf(
        train_ds, d, settings.epochs, settings.lr, settings.neg_per_pos, seed, split=settings.split, l2=settings.l2
    )


def make_lists(
    gmf: GmfModel, ds: ImplicitDataset, n: int, exclude: Mapping[str, set] | None = None
) -> dict[str, list[RankedList]]:
    """Initial top-n list for every user, grouped by split."""
    out: dict[str, list[RankedList]] = {s: [] for s in SPLITS}
    for u in ds.users:
        blocked = exclude.get(u) if exclude is not None else None
        out[ds.split_assignment[u]].append(initial_list(gmf, u, n, blocked))
    return out


def fit_reranker(
    config: RaiseConfig,
    gmf: GmfModel,
    lists: Mapping[str, Sequence[RankedList]],
    relevant: Mapping[str, set],
    reviews: ReviewStore,
    track_train_nll: bool = True,
) -> tuple[RaiseModel, TrainResult]:
    model = RaiseModel(config, gmf)
    train_data = build_list_tensors(lists["train"], relevant, reviews, gmf, config)
    val_data = build_list_tensors(lists["val"], relevant, reviews, gmf, config) if lists.get("val") else None
    result = train(model, train_data, val_data, relevant, track_train_nll=track_train_nll)
    return model, result


def evaluate_model(
    model: RaiseModel,
    lists: Sequence[RankedList],
    relevant: Mapping[str, set],
    reviews: ReviewStore,
    method: str,
    ks=DEFAULT_KS,
    map_denominator: str = "relevant",
) -> MetricTable:
    data = build_list_tensors(lists, relevant, reviews, model.gmf, model.config)
    reranked = rerank_all(model, data)
    return evaluate(reranked, relevant, [rl.user_id for rl in lists], ks, method, map_denominator)


def evaluate_initial(
    lists: Sequence[RankedList], relevant: Mapping[str, set], n: int, ks=DEFAULT_KS, map_denominator: str = "relevant"
) -> MetricTable:
    trimmed = {rl.user_id: rl.items[:n] for rl in lists}
    return evaluate(trimmed, relevant, [rl.user_id for rl in lists], ks, "gmf_initial", map_denominator)
