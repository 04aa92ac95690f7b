"""Interaction ingestion, implicit binarisation, user splits and review embeddings.

File formats
------------
interactions TSV
    ``user_id<TAB>item_id<TAB>rating[<TAB>timestamp]``; UTF-8; lines starting
    with ``#`` are comments. Identifiers are an optional alphabetic prefix
    followed by digits (``u17``, ``i3``, ``42``); the digits are the numeric
    key used in binary files.
reviews JSONL
    one object per line: ``{"kind": "user"|"item", "id": ..., "text": ...}``.
RVE1
    magic ``RVE1``, u32 LE dim, then records of
    ``u8 kind (0 user, 1 item) | u64 LE id | u32 LE count | count*dim f32 LE``.
"""

from __future__ import annotations

import hashlib
import json
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, EmptyDatasetError, FormatError, LookupFailure, ParseError
from .numerics import Xoshiro256

ID_PATTERN = re.compile(r"^[A-Za-z_]*([0-9]+)$")
RVE_MAGIC = b"RVE1"
KIND_CODES = {"user": 0, "item": 1}
SPLITS = ("train", "val", "test")


def id_number(identifier) -> int:
    """Numeric key of an identifier such as ``"u12"`` (-> 12)."""
    if isinstance(identifier, (int, np.integer)):
        return int(identifier)
    m = ID_PATTERN.match(str(identifier))
    if m is None:
        raise ParseError(f"unrecognised identifier format: {identifier!r}")
    return int(m.group(1))


def _id_sort_key(identifier: str):
    return (id_number(identifier), identifier)


# -------------------------------------------------------------- interactions

@dataclass(frozen=True)
class Interaction:
    user_id: str
    item_id: str
    rating: float
    timestamp: int | None = None


def load_interactions(path) -> list[Interaction]:
    out: list[Interaction] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise ParseError(f"{path}:{lineno}: expected 3 or 4 tab-separated fields, got {len(fields)}")
            user, item = fields[0].strip(), fields[1].strip()
            for ident in (user, item):
                if ID_PATTERN.match(ident) is None:
                    raise ParseError(f"{path}:{lineno}: unrecognised identifier format {ident!r}")
            try:
                rating = float(fields[2])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: rating {fields[2]!r} is not a number") from None
            timestamp = None
            if len(fields) == 4:
                try:
                    timestamp = int(fields[3])
                except ValueError:
                    raise ParseError(f"{path}:{lineno}: timestamp {fields[3]!r} is not an integer") from None
            out.append(Interaction(user, item, rating, timestamp))
    return out


def write_interactions(path, interactions: Iterable[Interaction]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# user_id\titem_id\trating\ttimestamp\n")
        for it in interactions:
            row = [it.user_id, it.item_id, repr(float(it.rating))]
            if it.timestamp is not None:
                row.append(str(it.timestamp))
            fh.write("\t".join(row) + "\n")


# -------------------------------------------------------------- implicit dataset

@dataclass
class ImplicitDataset:
    users: list[str]
    items: list[str]
    positives: dict[str, set[str]]
    split_assignment: dict[str, str] = field(default_factory=dict)

    def users_in(self, split: str) -> list[str]:
        return [u for u in self.users if self.split_assignment.get(u) == split]

    def user_index(self) -> dict[str, int]:
        return {u: k for k, u in enumerate(self.users)}

    def item_index(self) -> dict[str, int]:
        return {i: k for k, i in enumerate(self.items)}

    def to_interactions(self) -> list[Interaction]:
        return [Interaction(u, i, 1.0) for u in self.users for i in sorted(self.positives[u], key=_id_sort_key)]


def binarize(interactions: Sequence[Interaction], min_interactions: int = 0) -> ImplicitDataset:
    """Every rated (user, item) pair becomes a positive, whatever the rating."""
    if len(interactions) == 0:
        raise EmptyDatasetError("no interactions to binarize")
    positives: dict[str, set[str]] = {}
    for it in interactions:
        positives.setdefault(it.user_id, set()).add(it.item_id)
    if min_interactions > 0:
        item_counts: dict[str, int] = {}
        for items in positives.values():
            for i in items:
                item_counts[i] = item_counts.get(i, 0) + 1
        positives = {
            u: {i for i in items if item_counts[i] >= min_interactions}
            for u, items in positives.items()
            if len(items) >= min_interactions
        }
        positives = {u: items for u, items in positives.items() if items}
        if not positives:
            raise EmptyDatasetError(f"no user survives min_interactions={min_interactions}")
    users = sorted(positives, key=_id_sort_key)
    items = sorted({i for s in positives.values() for i in s}, key=_id_sort_key)
    return ImplicitDataset(users, items, positives)


def split_users(ds: ImplicitDataset, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> ImplicitDataset:
    """Assign each user to train/val/test by a seeded shuffle; train takes the remainder."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {tuple(ratios)}")
    n = len(ds.users)
    order = np.random.default_rng(seed).permutation(n)
    n_val = int(round(ratios[1] * n))
    n_test = int(round(ratios[2] * n))
    assignment: dict[str, str] = {}
    for rank, idx in enumerate(order):
        if rank < n_val:
            label = "val"
        elif rank < n_val + n_test:
            label = "test"
        else:
            label = "train"
        assignment[ds.users[idx]] = label
    return ImplicitDataset(list(ds.users), list(ds.items), {u: set(s) for u, s in ds.positives.items()}, assignment)


def write_splits(path, ds: ImplicitDataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("user_id\tsplit\n")
        for u in ds.users:
            fh.write(f"{u}\t{ds.split_assignment[u]}\n")


def read_splits(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "user_id\tsplit":
            raise FormatError(f"{path}: missing split header")
        for line in fh:
            if line.strip():
                u, s = line.rstrip("\n").split("\t")
                out[u] = s
    return out


# -------------------------------------------------------------- review store

@dataclass
class ReviewStore:
    """Per-entity review embedding matrices keyed by numeric id (rows in review order)."""

    dim: int
    user_reviews: dict[int, np.ndarray] = field(default_factory=dict)
    item_reviews: dict[int, np.ndarray] = field(default_factory=dict)

    def table(self, kind: str) -> dict[int, np.ndarray]:
        if kind == "user":
            return self.user_reviews
        if kind == "item":
            return self.item_reviews
        raise ConfigError(f"review kind must be 'user' or 'item', got {kind!r}")

    def reviews(self, kind: str, entity) -> np.ndarray:
        key = id_number(entity)
        table = self.table(kind)
        if key not in table:
            raise LookupFailure(f"no {kind} {entity!r} in review store")
        return table[key]

    def count(self, kind: str, entity) -> int:
        return len(self.table(kind).get(id_number(entity), ()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ReviewStore) or self.dim != other.dim:
            return False
        for kind in ("user", "item"):
            a, b = self.table(kind), other.table(kind)
            if list(a) != list(b):
                return False
            if any(a[k].shape != b[k].shape or not np.array_equal(a[k], b[k]) for k in a):
                return False
        return True


@dataclass
class PaddedReviews:
    matrix: np.ndarray  # l x d
    mask: np.ndarray  # length l, 0/1
    real_count: int


def load_review_records(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc.msg}") from None
            if obj.get("kind") not in KIND_CODES or "id" not in obj or "text" not in obj:
                raise ParseError(f"{path}:{lineno}: review needs kind (user|item), id and text")
            records.append(obj)
    return records


def write_review_records(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps({"kind": rec["kind"], "id": rec["id"], "text": rec["text"]}, sort_keys=True) + "\n")


def tokenize(text: str) -> list[str]:
    return text.lower().split()


def word_vector(word: str, dim: int, seed: int) -> np.ndarray:
    """Unit-norm pseudorandom vector keyed by (stable hash of word, seed)."""
    h = int.from_bytes(hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest(), "little")
    gen = Xoshiro256(h ^ (int(seed) & 0xFFFFFFFFFFFFFFFF))
    while True:
        v = gen.normals(dim)
        norm = float(np.sqrt(v @ v))
        if norm > 0.0:
            return v / norm


def hash_embed_reviews(records: Iterable[dict], dim: int, seed: int = 0, l_u: int = 20, l_i: int = 20) -> ReviewStore:
    """Embed each review as the sum of its word vectors; keep the earliest l per entity."""
    if dim < 1:
        raise ConfigError(f"embedding dim must be >= 1, got {dim}")
    cache: dict[str, np.ndarray] = {}
    collected: dict[str, dict[int, list[np.ndarray]]] = {"user": {}, "item": {}}
    limits = {"user": l_u, "item": l_i}
    for rec in records:
        kind = rec["kind"]
        rows = collected[kind].setdefault(id_number(rec["id"]), [])
        if len(rows) >= limits[kind]:
            continue
        vec = np.zeros(dim)
        for w in tokenize(rec["text"]):
            if w not in cache:
                cache[w] = word_vector(w, dim, seed)
            vec = vec + cache[w]
        rows.append(vec)
    store = ReviewStore(dim)
    for kind in ("user", "item"):
        table = store.table(kind)
        for key, rows in collected[kind].items():
            table[key] = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return store


def write_review_embeddings(path, store: ReviewStore) -> None:
    with open(path, "wb") as fh:
        fh.write(RVE_MAGIC)
        fh.write(struct.pack("<I", store.dim))
        for kind in ("user", "item"):
            for key, mat in store.table(kind).items():
                fh.write(struct.pack("<BQI", KIND_CODES[kind], key, mat.shape[0]))
                fh.write(np.ascontiguousarray(mat, dtype="<f4").tobytes())


def load_review_embeddings(path) -> ReviewStore:
    blob = Path(path).read_bytes()
    if blob[:4] != RVE_MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}, expected {RVE_MAGIC!r}")
    if len(blob) < 8:
        raise FormatError(f"{path}: truncated header")
    (dim,) = struct.unpack_from("<I", blob, 4)
    if dim < 1:
        raise FormatError(f"{path}: dim must be positive")
    store = ReviewStore(dim)
    offset = 8
    head = struct.calcsize("<BQI")
    while offset < len(blob):
        if offset + head > len(blob):
            raise FormatError(f"{path}: truncated record header at offset {offset}")
        kind_code, key, count = struct.unpack_from("<BQI", blob, offset)
        if kind_code not in (0, 1):
            raise FormatError(f"{path}: unknown record kind {kind_code} at offset {offset}")
        body = count * dim * 4
        if offset + head + body > len(blob):
            raise FormatError(f"{path}: truncated record at offset {offset}")
        values = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=offset + head)
        store.table("user" if kind_code == 0 else "item")[key] = values.astype(np.float64).reshape(count, dim)
        offset += head + body
    return store


def pad_review_sequence(store: ReviewStore, entity, l: int, kind: str = "user") -> PaddedReviews:
    """Earliest ``l`` reviews with a 0/1 mask; an entity without reviews is all padding."""
    reviews = store.table(kind).get(id_number(entity), np.zeros((0, store.dim)))
    count = min(reviews.shape[0], l)
    matrix = np.zeros((l, store.dim))
    matrix[:count] = reviews[:count]
    mask = np.zeros(l)
    mask[:count] = 1.0
    return PaddedReviews(matrix, mask, count)


def padded_batch(store: ReviewStore, kind: str, entities: Sequence, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Stack padded review matrices; entities without reviews become all-padding."""
    table = store.table(kind)
    mats = np.zeros((len(entities), l, store.dim))
    mask = np.zeros((len(entities), l))
    for row, entity in enumerate(entities):
        reviews = table.get(id_number(entity))
        if reviews is None:
            continue
        count = min(reviews.shape[0], l)
        mats[row, :count] = reviews[:count]
        mask[row, :count] = 1.0
    return mats, mask


def baseline_review_feature(store: ReviewStore, item) -> np.ndarray:
    """Summed review embedding of an item (the review feature given to non-review re-rankers)."""
    return store.reviews("item", item).sum(axis=0) if store.count("item", item) else np.zeros(store.dim)


# -------------------------------------------------------------- synthetic data

@dataclass
class SyntheticData:
    interactions: list[Interaction]
    reviews: list[dict]
    user_mixtures: np.ndarray
    item_mixtures: np.ndarray


COMMON_WORDS = 40
INTENT_WORDS = 25
REVIEW_INTENT_TOKENS = 6
REVIEW_COMMON_TOKENS = 4


def synthesize(
    n_users: int,
    n_items: int,
    n_intents: int,
    reviews_per_entity: int,
    dim: int,
    seed: int = 0,
    density: float = 0.1,
    concentration: float = 0.05,
) -> SyntheticData:
    """Planted-intention data: interactions and review texts share per-user/item intent mixtures."""
    if min(n_users, n_items, n_intents, reviews_per_entity, dim) < 1:
        raise ConfigError("all synthetic counts must be >= 1")
    if n_intents > dim:
        raise ConfigError(f"n_intents ({n_intents}) must not exceed dim ({dim})")
    rng = np.random.default_rng(seed)
    alpha = np.full(n_intents, concentration)
    theta_u = rng.dirichlet(alpha, size=n_users) if n_intents > 1 else np.ones((n_users, 1))
    theta_i = rng.dirichlet(alpha, size=n_items) if n_intents > 1 else np.ones((n_items, 1))
    affinity = theta_u @ theta_i.T
    scale = density * n_users * n_items / affinity.sum()
    prob = np.minimum(1.0, scale * affinity)
    hits = rng.random((n_users, n_items)) < prob
    for u in range(n_users):
        if not hits[u].any():
            hits[u, rng.choice(n_items, p=affinity[u] / affinity[u].sum())] = True

    interactions = []
    clock = 1_000_000
    for u in range(n_users):
        for i in np.flatnonzero(hits[u]):
            clock += int(rng.integers(1, 3600))
            interactions.append(Interaction(f"u{u}", f"i{i}", float(rng.integers(1, 6)), clock))

    def review_text(mixture: np.ndarray) -> str:
        z = rng.choice(n_intents, p=mixture)
        words = [f"t{z}w{w}" for w in rng.integers(0, INTENT_WORDS, REVIEW_INTENT_TOKENS)]
        words += [f"c{w}" for w in rng.integers(0, COMMON_WORDS, REVIEW_COMMON_TOKENS)]
        rng.shuffle(words)
        return " ".join(words)

    reviews = []
    for u in range(n_users):
        for _ in range(reviews_per_entity):
            reviews.append({"kind": "user", "id": f"u{u}", "text": review_text(theta_u[u])})
    for i in range(n_items):
        for _ in range(reviews_per_entity):
            reviews.append({"kind": "item", "id": f"i{i}", "text": review_text(theta_i[i])})
    return SyntheticData(interactions, reviews, theta_u, theta_i)


def gen_synthetic(
    n_users: int,
    n_items: int,
    n_intents: int,
    reviews_per_entity: int,
    dim: int,
    seed: int,
    out_dir,
    density: float = 0.1,
    concentration: float = 0.05,
) -> tuple[Path, Path]:
    data = synthesize(n_users, n_items, n_intents, reviews_per_entity, dim, seed, density, concentration)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    inter_path = out_dir / "interactions.tsv"
    review_path = out_dir / "reviews.jsonl"
    write_interactions(inter_path, data.interactions)
    write_review_records(review_path, data.reviews)
    return inter_path, review_path
