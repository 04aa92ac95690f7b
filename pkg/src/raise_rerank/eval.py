"""Binary-relevance ranking metrics (Pre@k, MAP@k, NDCG@k) and metric tables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DataError, FormatError

METRIC_HEADER = "method\tk\tprecision\tmap\tndcg"
DEFAULT_KS = (5, 10, 20)


def _cutoff(ranked: Sequence, k: int) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return min(k, len(ranked))


def precision_at_k(ranked: Sequence, relevant, k: int) -> float:
    """Hits in the top k over k; a list shorter than k uses its own length."""
    k_eff = _cutoff(ranked, k)
    if k_eff == 0:
        return 0.0
    return sum(1 for item in ranked[:k_eff] if item in relevant) / k_eff


def map_at_k(ranked: Sequence, relevant, k: int, denominator: str = "relevant") -> float:
    """Average precision of one list cut off at k.

    ``denominator="relevant"`` divides by min(k, |relevant|); ``"hits"`` by the
    number of hits in the top k. An empty relevant set gives 0.
    """
    k_eff = _cutoff(ranked, k)
    hits = 0
    total = 0.0
    for j, item in enumerate(ranked[:k_eff], start=1):
        if item in relevant:
            hits += 1
            total += hits / j
    if denominator == "relevant":
        norm = min(k, len(relevant))
    elif denominator == "hits":
        norm = hits
    else:
        raise ValueError(f"unknown MAP denominator {denominator!r}")
    return total / norm if norm else 0.0


def ndcg_at_k(ranked: Sequence, relevant, k: int) -> float:
    k_eff = _cutoff(ranked, k)
    dcg = sum(1.0 / math.log2(j + 1) for j, item in enumerate(ranked[:k_eff], start=1) if item in relevant)
    ideal = sum(1.0 / math.log2(j + 1) for j in range(1, min(k, len(relevant)) + 1))
    return dcg / ideal if ideal > 0 else 0.0


@dataclass
class MetricRow:
    method: str
    k: int
    precision: float
    map: float
    ndcg: float


@dataclass
class MetricTable:
    rows: list[MetricRow] = field(default_factory=list)

    def extend(self, other: "MetricTable") -> None:
        self.rows.extend(other.rows)

    def get(self, method: str, k: int) -> MetricRow:
        for row in self.rows:
            if row.method == method and row.k == k:
                return row
        raise KeyError((method, k))

    def to_tsv(self) -> str:
        lines = [METRIC_HEADER]
        for r in self.rows:
            lines.append(f"{r.method}\t{r.k}\t{r.precision:.10f}\t{r.map:.10f}\t{r.ndcg:.10f}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_tsv())

    @classmethod
    def read(cls, path) -> "MetricTable":
        with open(path, encoding="utf-8") as fh:
            if fh.readline().rstrip("\n") != METRIC_HEADER:
                raise FormatError(f"{path}: missing header {METRIC_HEADER!r}")
            rows = []
            for line in fh:
                if line.strip():
                    m, k, p, a, n = line.rstrip("\n").split("\t")
                    rows.append(MetricRow(m, int(k), float(p), float(a), float(n)))
        return cls(rows)


def evaluate(
    lists: Mapping[str, object],
    positives: Mapping[str, set],
    users: Iterable[str],
    ks: Sequence[int] = DEFAULT_KS,
    method: str = "raise",
    map_denominator: str = "relevant",
) -> MetricTable:
    """Average each metric over users with at least one relevant item.

    ``lists`` maps user -> RankedList (anything with ``.items``) or a plain item sequence.
    """
    per_user = []
    for u in users:
        if u not in lists:
            raise DataError(f"no ranked list for user {u}")
        relevant = positives.get(u, set())
        if not relevant:
            continue
        ranked = getattr(lists[u], "items", lists[u])
        per_user.append((list(ranked), relevant))
    table = MetricTable()
    for k in ks:
        if per_user:
            count = len(per_user)
            p = sum(precision_at_k(r, rel, k) for r, rel in per_user) / count
            a = sum(map_at_k(r, rel, k, map_denominator) for r, rel in per_user) / count
            g = sum(ndcg_at_k(r, rel, k) for r, rel in per_user) / count
        else:
            p = a = g = 0.0
        table.rows.append(MetricRow(method, k, p, a, g))
    return table
