import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from raise_rerank.errors import DataError, FormatError
from raise_rerank.eval import MetricTable, evaluate, map_at_k, ndcg_at_k, precision_at_k


def brute_precision(ranked, relevant, k):
    cut = min(k, len(ranked))
    return sum(1 for j in range(cut) if ranked[j] in relevant) / cut if cut else 0.0


def brute_ap(ranked, relevant, k):
    if not relevant:
        return 0.0
    total = 0.0
    for j in range(min(k, len(ranked))):
        if ranked[j] in relevant:
            total += brute_precision(ranked, relevant, j + 1)
    return total / min(k, len(relevant))


def brute_ndcg(ranked, relevant, k):
    dcg = 0.0
    for j in range(min(k, len(ranked))):
        if ranked[j] in relevant:
            dcg += 1.0 / math.log2(j + 2)
    ideal = 0.0
    for j in range(min(k, len(relevant))):
        ideal += 1.0 / math.log2(j + 2)
    return dcg / ideal if ideal else 0.0


def test_precision_examples():
    ranked = ["a", "b", "c", "d", "e"]
    assert precision_at_k(ranked, {"b", "e"}, 5) == 0.4
    assert precision_at_k(ranked, set(), 5) == 0.0
    assert precision_at_k(ranked, set(ranked), 5) == 1.0
    # k beyond the list uses the list length
    assert precision_at_k(["a", "b"], {"a"}, 5) == 0.5
    with pytest.raises(ValueError):
        precision_at_k(ranked, {"a"}, 0)


def test_map_and_ndcg_hand_values():
    ranked, relevant = ["x", "y", "z"], {"x", "z"}
    assert abs(map_at_k(ranked, relevant, 3) - 5 / 6) <= 1e-12
    assert abs(ndcg_at_k(ranked, relevant, 3) - 0.9197) <= 1e-4
    assert map_at_k(["a", "b", "c"], {"a", "b"}, 5) == 1.0
    assert ndcg_at_k(["a", "b", "c"], {"a", "b"}, 3) == 1.0
    assert ndcg_at_k(["a", "b"], {"q"}, 2) == 0.0
    assert map_at_k(ranked, relevant, 3, denominator="hits") == (1 + 2 / 3) / 2
    with pytest.raises(ValueError):
        map_at_k(ranked, relevant, 3, denominator="all")


def test_metrics_match_brute_force_oracles():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(1, 30))
        ranked = [f"i{j}" for j in rng.permutation(40)[:n]]
        relevant = {f"i{j}" for j in rng.choice(40, int(rng.integers(0, 10)), replace=False)}
        k = int(rng.integers(1, 25))
        assert abs(precision_at_k(ranked, relevant, k) - brute_precision(ranked, relevant, k)) <= 1e-12
        assert abs(map_at_k(ranked, relevant, k) - brute_ap(ranked, relevant, k)) <= 1e-12
        assert abs(ndcg_at_k(ranked, relevant, k) - brute_ndcg(ranked, relevant, k)) <= 1e-12


patterns = st.lists(st.booleans(), min_size=1, max_size=15)


@given(patterns, st.integers(1, 15), st.integers(0, 5))
def test_metrics_ignore_item_labels(pattern, k, extra):
    a = [f"i{j}" for j in range(len(pattern))]
    b = [f"z{len(pattern) - j}" for j in range(len(pattern))]
    rel_a = {x for x, hit in zip(a, pattern) if hit} | {f"m{j}" for j in range(extra)}
    rel_b = {x for x, hit in zip(b, pattern) if hit} | {f"q{j}" for j in range(extra)}
    for fn in (precision_at_k, map_at_k, ndcg_at_k):
        assert fn(a, rel_a, k) == fn(b, rel_b, k)


@settings(max_examples=200)
@given(patterns, st.integers(1, 15), st.data())
def test_moving_relevant_item_earlier_never_hurts(pattern, k, data):
    ranked = [f"i{j}" for j in range(len(pattern))]
    relevant = {x for x, hit in zip(ranked, pattern) if hit}
    hits = [j for j, h in enumerate(pattern) if h]
    misses = [j for j, h in enumerate(pattern) if not h]
    if not hits or not misses:
        return
    h = data.draw(st.sampled_from(hits))
    earlier = [m for m in misses if m < h]
    if not earlier:
        return
    m = data.draw(st.sampled_from(earlier))
    moved = list(ranked)
    moved[h], moved[m] = moved[m], moved[h]
    assert map_at_k(moved, relevant, k) >= map_at_k(ranked, relevant, k) - 1e-15
    assert ndcg_at_k(moved, relevant, k) >= ndcg_at_k(ranked, relevant, k) - 1e-15


def test_evaluate_averages_over_users_with_relevant_items():
    lists = {"u1": ["a", "b"], "u2": ["c", "d"], "u3": ["e", "f"]}
    positives = {"u1": {"a"}, "u2": {"d"}, "u3": set()}
    table = evaluate(lists, positives, ["u1", "u2", "u3"], ks=(1, 2), method="m")
    assert table.get("m", 1).precision == 0.5
    assert table.get("m", 2).map == (1.0 + 0.5) / 2
    again = evaluate(lists, positives, ["u1", "u2", "u3"], ks=(1, 2), method="m")
    assert table.to_tsv() == again.to_tsv()
    for row in table.rows:
        assert 0 <= row.precision <= 1 and 0 <= row.map <= 1 and 0 <= row.ndcg <= 1
    with pytest.raises(DataError, match="u9"):
        evaluate(lists, positives, ["u9"])


def test_evaluate_matches_per_user_oracles():
    rng = np.random.default_rng(1)
    lists, positives = {}, {}
    for u in range(500):
        lists[f"u{u}"] = [f"i{j}" for j in rng.permutation(30)[:20]]
        positives[f"u{u}"] = {f"i{j}" for j in rng.choice(30, int(rng.integers(1, 8)), replace=False)}
    users = list(lists)
    table = evaluate(lists, positives, users, ks=(5, 10))
    for k in (5, 10):
        row = table.get("raise", k)
        assert abs(row.precision - np.mean([brute_precision(lists[u], positives[u], k) for u in users])) <= 1e-12
        assert abs(row.map - np.mean([brute_ap(lists[u], positives[u], k) for u in users])) <= 1e-12
        assert abs(row.ndcg - np.mean([brute_ndcg(lists[u], positives[u], k) for u in users])) <= 1e-12


def test_metric_table_round_trip(tmp_path):
    table = evaluate({"u": ["a", "b"]}, {"u": {"b"}}, ["u"], ks=(1, 2), method="gmf_initial")
    table.write(tmp_path / "m.tsv")
    back = MetricTable.read(tmp_path / "m.tsv")
    assert back.to_tsv() == table.to_tsv()
    (tmp_path / "x.tsv").write_text("bad\n")
    with pytest.raises(FormatError):
        MetricTable.read(tmp_path / "x.tsv")
