"""Shared builders for the test suite: tiny random models and a gradient checker."""

from __future__ import annotations

import numpy as np

from raise_rerank.base_ranker import RankedList, init_gmf
from raise_rerank.data import ReviewStore
from raise_rerank.model import RaiseConfig, RaiseModel, build_list_tensors
from raise_rerank.numerics import finite_diff_grad


def random_store(rng, d, n_users, n_items, max_reviews=3, allow_empty_items=True):
    store = ReviewStore(d)
    for k in range(n_users):
        store.user_reviews[k] = rng.standard_normal((int(rng.integers(1, max_reviews + 1)), d))
    low = 0 if allow_empty_items else 1
    for k in range(n_items):
        c = int(rng.integers(low, max_reviews + 1))
        if c:
            store.item_reviews[k] = rng.standard_normal((c, d))
    return store


def tiny_problem(seed=0, n_users=3, n_items=10, nudge=0.05, **cfg):
    """A small model with random reviews, lists and labels.

    ``nudge`` perturbs every tensor so no ReLU pre-activation sits exactly on
    its kink (zero biases and zero review rows would otherwise put it there).
    """
    rng = np.random.default_rng(seed)
    base = dict(d=8, n=6, t=2, b=1, l_u=3, l_i=3, dropout=0.0)
    base.update(cfg)
    config = RaiseConfig(**base)
    users = [f"u{k}" for k in range(n_users)]
    items = [f"i{k}" for k in range(n_items)]
    gmf = init_gmf(users, items, config.d, seed + 1)
    store = random_store(rng, config.d, n_users, n_items)
    lists = [RankedList(u, list(rng.choice(items, config.n, replace=False)), [0.0] * config.n) for u in users]
    positives = {u: set(rng.choice(items, 4, replace=False)) for u in users}
    model = RaiseModel(config, gmf)
    if nudge:
        for p in model.all_tensors():
            p.value += nudge * rng.standard_normal(p.shape)
    data = build_list_tensors(lists, positives, store, gmf, config)
    return model, data, store, lists, positives


def relative_error(analytic, numeric, floor=1e-7):
    """||a - f|| / max(||a||, ||f||); both norms below ``floor`` count as agreement."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def gradient_errors(model, data, eps=1e-5):
    model.zero_grad()
    model.loss_and_backward(data)
    grads = {p.name: p.grad.copy() for p in model.parameters()}
    errors = {}
    for p in model.parameters():
        numeric = finite_diff_grad(lambda _: model.loss_and_backward(data, backward=False)[0], p, eps)
        errors[p.name] = relative_error(grads[p.name], numeric)
    model.zero_grad()
    return errors


def planted_store(d=8, lu=4, li=6, target=(2, 5), seed=0):
    """Review embeddings where one (user k, item j) pair shares a large direction."""
    rng = np.random.default_rng(seed)
    basis = np.linalg.qr(rng.standard_normal((d, d)))[0]
    user = 0.3 * rng.standard_normal((lu, d))
    item = 0.3 * rng.standard_normal((li, d))
    user[target[0]] = 3.0 * basis[0]
    item[target[1]] = 3.0 * basis[0]
    return ReviewStore(d, {0: user}, {0: item})


def identity_model(d=8, l=6):
    """Single-layer encoders and M set to the identity, so match scores are dot products."""
    gmf = init_gmf(["u0"], ["i0"], d, 0)
    model = RaiseModel(RaiseConfig(d=d, n=1, t=1, l_u=l, l_i=l, mlp_layers=1), gmf)
    for enc in (model.idm.f_user, model.idm.f_item):
        enc.layers[0][0].value[...] = np.eye(d)
    model.idm.M.value[...] = np.eye(d)
    return model
