"""``raise-rerank`` command-line entry point.

Each command reads its inputs from the work directory and writes its
artifacts back there, so the pipeline runs as a chain::

    gen-synth -> embed-reviews -> train-base -> make-lists -> train-rerank -> evaluate
                                                                          \\-> explain
    ablate (after make-lists and embed-reviews), profile (standalone)

Every setting can come from ``--config FILE`` (``key=value`` lines) or a flag
named after the key (``--batch-size 8`` or ``--batch_size 8``).
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from .base_ranker import GmfModel, read_lists, write_lists
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config, parse_pairs
from .data import (
    SPLITS,
    ImplicitDataset,
    binarize,
    gen_synthetic,
    hash_embed_reviews,
    load_interactions,
    load_review_embeddings,
    load_review_records,
    read_splits,
    split_users,
    write_review_embeddings,
    write_splits,
)
from .dte import (
    ExpertBank,
    StaticAttentionParams,
    cost_report,
    dynamic_self_attention,
    instrumented_costs,
    multi_head,
    self_attention,
)
from .errors import DependencyError, FormatError, RaiseError
from .model import RaiseModel, explain
from .numerics import Parameter
from . import pipeline

log = logging.getLogger("raise_rerank")

COMMANDS = (
    "gen-synth",
    "embed-reviews",
    "train-base",
    "make-lists",
    "train-rerank",
    "evaluate",
    "ablate",
    "profile",
    "explain",
)
ABLATE_VARIANTS = ("full", "no_idm", "no_dte", "no_both")
KNOWN_HEADER = "user_id\titem_id"
EXPLAIN_HEADER = "user\titem\tk\tj\tscore"
TRAIN_LOG_HEADER = "epoch\ttrain_nll\tval_map5\tclamped"


# -------------------------------------------------------------- artifacts

def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DependencyError(f"missing {path}; run `raise-rerank {producer}` first")
    return path


def _dataset(cfg: RunConfig) -> ImplicitDataset:
    inter = _require(cfg.path("interactions"), "gen-synth")
    ds = binarize(load_interactions(inter), cfg.min_interactions)
    split_path = Path(cfg.workdir) / "splits.tsv"
    if split_path.exists():
        assignment = read_splits(split_path)
        unknown = sorted(set(ds.users) - set(assignment))
        if unknown:
            raise FormatError(f"{split_path}: no split for users {', '.join(unknown[:5])}")
        return ImplicitDataset(ds.users, ds.items, ds.positives, {u: assignment[u] for u in ds.users})
    return split_users(ds, (0.8, 0.1, 0.1), cfg.seed)


def _write_known(path: Path, known: dict[str, set], ds: ImplicitDataset) -> None:
    order = {item: k for k, item in enumerate(ds.items)}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(KNOWN_HEADER + "\n")
        for u in ds.users:
            for item in sorted(known.get(u, ()), key=order.__getitem__):
                fh.write(f"{u}\t{item}\n")


def _read_known(path: Path, ds: ImplicitDataset) -> dict[str, set]:
    known: dict[str, set] = {u: set() for u in ds.users}
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != KNOWN_HEADER:
            raise FormatError(f"{path}: missing header {KNOWN_HEADER!r}")
        for lineno, line in enumerate(fh, start=2):
            if line.strip():
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise FormatError(f"{path}:{lineno}: expected 2 fields")
                known.setdefault(parts[0], set()).add(parts[1])
    return known


def _save_gmf(path: Path, gmf: GmfModel, cfg: RunConfig) -> None:
    header = {"d": gmf.dim, "n": cfg.n, "t": cfg.t, "b": cfg.b, "l_u": cfg.l_u, "l_i": cfg.l_i}
    save_checkpoint(path, header, [(p.name, p.value) for p in gmf.parameters()])


def _load_gmf(cfg: RunConfig, ds: ImplicitDataset) -> GmfModel:
    path = _require(Path(cfg.workdir) / "gmf.ckpt", "train-base")
    _, tensors = load_checkpoint(path)
    for name in ("gmf.P", "gmf.Q", "gmf.h"):
        if name not in tensors:
            raise FormatError(f"{path}: missing tensor {name}")
    P, Q, h = tensors["gmf.P"], tensors["gmf.Q"], tensors["gmf.h"]
    if P.shape[0] != len(ds.users) or Q.shape[0] != len(ds.items):
        raise FormatError(f"{path}: shapes {P.shape}/{Q.shape} do not match {len(ds.users)} users/{len(ds.items)} items")
    return GmfModel(ds.users, ds.items, Parameter("gmf.P", P), Parameter("gmf.Q", Q), Parameter("gmf.h", h))


def _ordered_lists(cfg: RunConfig, ds: ImplicitDataset) -> dict:
    """Lists per split, in dataset user order."""
    order = {u: k for k, u in enumerate(ds.users)}
    out = {}
    for split in SPLITS:
        found = read_lists(_require(Path(cfg.workdir) / f"lists_{split}.tsv", "make-lists"))
        out[split] = sorted(found.values(), key=lambda rl: order[rl.user_id])
    return out


def _relevant(cfg: RunConfig, ds: ImplicitDataset) -> dict[str, set]:
    known_path = _require(Path(cfg.workdir) / "known.tsv", "train-base")
    return pipeline.targets(ds, _read_known(known_path, ds), cfg.exclude_train)


def _reviews(cfg: RunConfig):
    return load_review_embeddings(_require(cfg.path("embeddings"), "embed-reviews"))


def _trained_config(cfg: RunConfig) -> RunConfig:
    """Model settings come from the file written next to raise.ckpt."""
    path = _require(Path(cfg.workdir) / "raise.cfg", "train-rerank")
    saved = parse_pairs(path.read_text(encoding="utf-8").splitlines(), str(path))
    model_keys = {f.name for f in fields(cfg.model_config())}
    merged = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    merged.update({k: v for k, v in saved.items() if k in model_keys or k == "exclude_train"})
    return RunConfig(**merged).validate()


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# -------------------------------------------------------------- commands

def cmd_gen_synth(cfg: RunConfig) -> None:
    Path(cfg.workdir).mkdir(parents=True, exist_ok=True)
    inter, reviews = gen_synthetic(
        cfg.users, cfg.items, cfg.intents, cfg.reviews_per_entity, cfg.d, cfg.seed, cfg.workdir,
        cfg.density, cfg.concentration,
    )
    if inter != cfg.path("interactions"):
        inter.replace(cfg.path("interactions"))
    if reviews != cfg.path("reviews"):
        reviews.replace(cfg.path("reviews"))


def cmd_embed_reviews(cfg: RunConfig) -> None:
    records = load_review_records(_require(cfg.path("reviews"), "gen-synth"))
    store = hash_embed_reviews(records, cfg.d, cfg.seed, cfg.l_u, cfg.l_i)
    write_review_embeddings(cfg.path("embeddings"), store)


def cmd_train_base(cfg: RunConfig) -> None:
    ds = split_users(
        binarize(load_interactions(_require(cfg.path("interactions"), "gen-synth")), cfg.min_interactions),
        (0.8, 0.1, 0.1),
        cfg.seed,
    )
    work = Path(cfg.workdir)
    write_splits(work / "splits.tsv", ds)
    known = pipeline.holdout_positives(ds, cfg.holdout, cfg.seed)
    settings = pipeline.BaseSettings(cfg.base_epochs, cfg.base_lr, cfg.neg_per_pos, cfg.base_l2, cfg.holdout)
    gmf = pipeline.fit_base(ds, cfg.d, cfg.seed, settings, known)
    _write_known(work / "known.tsv", known, ds)
    _save_gmf(work / "gmf.ckpt", gmf, cfg)


def cmd_make_lists(cfg: RunConfig) -> None:
    ds = _dataset(cfg)
    gmf = _load_gmf(cfg, ds)
    known = _read_known(_require(Path(cfg.workdir) / "known.tsv", "train-base"), ds)
    lists = pipeline.make_lists(gmf, ds, cfg.n, known if cfg.exclude_train else None)
    for split, rows in lists.items():
        write_lists(Path(cfg.workdir) / f"lists_{split}.tsv", rows)


def _train_one(cfg: RunConfig, ds, gmf, lists, relevant, reviews, ablation: str):
    mcfg = cfg.model_config().replace(ablation=ablation)
    return pipeline.fit_reranker(mcfg, gmf, lists, relevant, reviews)


def cmd_train_rerank(cfg: RunConfig) -> None:
    ds = _dataset(cfg)
    lists = _ordered_lists(cfg, ds)
    reviews = _reviews(cfg)
    gmf = _load_gmf(cfg, ds)
    relevant = _relevant(cfg, ds)
    model, result = _train_one(cfg, ds, gmf, lists, relevant, reviews, cfg.ablation)
    work = Path(cfg.workdir)
    model.save(work / "raise.ckpt")
    if cfg.finetune_base:
        _save_gmf(work / "raise_gmf.ckpt", model.gmf, cfg)
    _write_text(work / "raise.cfg", cfg.to_text())
    lines = [TRAIN_LOG_HEADER]
    for st in result.history:
        vmap = "" if st.val_map5 is None else f"{st.val_map5:.10f}"
        lines.append(f"{st.epoch}\t{st.train_nll:.10f}\t{vmap}\t{st.clamped}")
    _write_text(work / "train_log.tsv", "\n".join(lines) + "\n")


def _load_trained(cfg: RunConfig, ds: ImplicitDataset) -> RaiseModel:
    work = Path(cfg.workdir)
    ckpt = _require(work / "raise.ckpt", "train-rerank")
    gmf = _load_gmf(cfg, ds)
    if cfg.finetune_base:
        _, tensors = load_checkpoint(_require(work / "raise_gmf.ckpt", "train-rerank"))
        for p in gmf.parameters():
            p.value = tensors[p.name]
    return RaiseModel.load(ckpt, cfg.model_config(), gmf)


def cmd_evaluate(cfg: RunConfig) -> None:
    _require(Path(cfg.workdir) / "raise.ckpt", "train-rerank")
    cfg = _trained_config(cfg)
    ds = _dataset(cfg)
    model = _load_trained(cfg, ds)
    lists = _ordered_lists(cfg, ds)["test"]
    relevant = _relevant(cfg, ds)
    ks = cfg.k_values()
    table = pipeline.evaluate_initial(lists, relevant, cfg.n, ks, cfg.map_denominator)
    method = "raise" if cfg.ablation == "full" else cfg.ablation
    table.extend(pipeline.evaluate_model(model, lists, relevant, _reviews(cfg), method, ks, cfg.map_denominator))
    table.write(Path(cfg.workdir) / "metrics.tsv")


def cmd_ablate(cfg: RunConfig) -> None:
    ds = _dataset(cfg)
    lists = _ordered_lists(cfg, ds)
    reviews = _reviews(cfg)
    relevant = _relevant(cfg, ds)
    ks = cfg.k_values()
    table = pipeline.evaluate_initial(lists["test"], relevant, cfg.n, ks, cfg.map_denominator)
    for variant in ABLATE_VARIANTS:
        gmf = _load_gmf(cfg, ds)
        model, _ = _train_one(cfg, ds, gmf, lists, relevant, reviews, variant)
        table.extend(pipeline.evaluate_model(model, lists["test"], relevant, reviews, variant, ks, cfg.map_denominator))
    table.write(Path(cfg.workdir) / "ablation.tsv")


def _time_mechanisms(cfg: RunConfig) -> dict[str, float]:
    rng = np.random.default_rng(cfg.seed)
    S = rng.standard_normal((cfg.n, cfg.d))
    static = StaticAttentionParams.random(cfg.d, cfg.heads, cfg.seed)
    bank = ExpertBank(cfg.d, cfg.t, cfg.seed)
    a = np.full(cfg.t, 1.0 / cfg.t)
    runs = {
        "static": lambda: self_attention(S, static.W_Q, static.W_K, static.W_V),
        "multihead": lambda: multi_head(S, static),
        "dynamic": lambda: dynamic_self_attention(S, a, bank),
    }
    out = {}
    for name, fn in runs.items():
        start = time.perf_counter()
        for _ in range(cfg.profile_repeats * cfg.b):
            fn()
        out[name] = (time.perf_counter() - start) / cfg.profile_repeats
    return out


def cmd_profile(cfg: RunConfig) -> None:
    work = Path(cfg.workdir)
    work.mkdir(parents=True, exist_ok=True)
    report = cost_report(cfg.n, cfg.d, cfg.t, cfg.heads, cfg.b)
    counted = instrumented_costs(cfg.n, cfg.d, cfg.t, cfg.heads, cfg.b, cfg.seed)
    for name, row in report.rows():
        if counted[name] != row.attn_madds:
            raise RaiseError(f"{name}: counted {counted[name]} multiply-adds, formula gives {row.attn_madds}")
    _write_text(work / "cost.tsv", report.to_tsv())
    # wall-clock numbers vary between runs, so they go to a log file only
    timings = _time_mechanisms(cfg)
    stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
    with open(work / "profile.log", "a", encoding="utf-8") as fh:
        for name, seconds in timings.items():
            fh.write(f"{stamp}\t{name}\tn={cfg.n}\td={cfg.d}\tt={cfg.t}\th={cfg.heads}\tb={cfg.b}\t{seconds * 1e3:.4f} ms\n")
    for name, seconds in timings.items():
        print(f"{name}\t{seconds * 1e3:.4f} ms per forward")


def cmd_explain(cfg: RunConfig) -> None:
    _require(Path(cfg.workdir) / "raise.ckpt", "train-rerank")
    cfg = _trained_config(cfg)
    ds = _dataset(cfg)
    model = _load_trained(cfg, ds)
    reviews = _reviews(cfg)
    user, item = cfg.user, cfg.item
    if not user or not item:
        lists = _ordered_lists(cfg, ds)["test"]
        if not lists:
            raise RaiseError("no test lists to pick a default user from; pass --user and --item")
        user = user or lists[0].user_id
        rl = next((r for r in lists if r.user_id == user), None)
        if not item:
            if rl is None:
                raise RaiseError(f"user {user} has no test list; pass --item")
            item = rl.items[0]
    exp = explain(model, reviews, user, item, cfg.top_m)
    lines = [EXPLAIN_HEADER] + [f"{user}\t{item}\t{k}\t{j}\t{score!r}" for k, j, score in exp.pairs]
    _write_text(Path(cfg.workdir) / "explain.tsv", "\n".join(lines) + "\n")


HANDLERS = {
    "gen-synth": cmd_gen_synth,
    "embed-reviews": cmd_embed_reviews,
    "train-base": cmd_train_base,
    "make-lists": cmd_make_lists,
    "train-rerank": cmd_train_rerank,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "profile": cmd_profile,
    "explain": cmd_explain,
}


# -------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="raise-rerank", description="Intention-aware list re-ranking pipeline.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--l", dest="l", metavar="L", help="sets both l_u and l_i")
    for f in fields(RunConfig):
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        parser.add_argument(*flags, dest=f.name, metavar=f.name.upper())
    return parser


def run(command: str, cfg: RunConfig) -> None:
    HANDLERS[command](cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose") and v is not None}
    try:
        cfg = parse_config(args.config, overrides)
        run(args.command, cfg)
    except RaiseError as exc:
        print(f"raise-rerank {args.command}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"raise-rerank {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
