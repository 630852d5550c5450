import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multicond.encoder import Encoder, EncoderConfig
from multicond.evaluation import (
    EmbeddingStore, RankedList, chance_metrics, embed_pool, evaluate, first_positive_rank,
    format_table, metrics_from_ranks, mrr, query_ranks, rank, recall_at_k,
)


def _scalar_rank(q, ids, vecs, exclude=()):
    """Selection-sort oracle: best cosine first, lower id on ties."""
    left = [(int(i), float(sum(a * b for a, b in zip(v, q)))) for i, v in zip(ids, vecs)
            if int(i) not in exclude]
    out = []
    while left:
        best = 0
        for j in range(1, len(left)):
            i, s = left[j]
            bi, bs = left[best]
            if s > bs or (s == bs and i < bi):
                best = j
        out.append(left.pop(best)[0])
    return out


def _scalar_recall(ranked, positives, k):
    for i in ranked[:k]:
        if i in positives:
            return 1
    return 0


def _scalar_mrr(lists, positives):
    total = 0.0
    for ranked, pos in zip(lists, positives):
        for r, i in enumerate(ranked, 1):
            if i in pos:
                total += 1.0 / r
                break
    return total / len(lists)


def _instance(rng):
    n, d = int(rng.integers(1, 12)), int(rng.integers(1, 5))
    ids = rng.permutation(100)[:n]
    # a coarse grid makes exact ties common
    vecs = rng.integers(-2, 3, size=(n, d)).astype(float)
    q = rng.integers(-2, 3, size=d).astype(float)
    return ids, vecs, q


def test_rank_recall_mrr_against_scalar_oracles():
    rng = np.random.default_rng(11)
    lists, pos_sets = [], []
    for t in range(1000):
        ids, vecs, q = _instance(rng)
        order = np.sort(ids)
        store = EmbeddingStore(order, vecs[np.argsort(ids)])
        exclude = set(int(i) for i in rng.choice(ids, size=int(rng.integers(0, 2)), replace=False))
        expected = _scalar_rank(q, store.ids, store.vectors, exclude)
        got = rank(q, store, exclude=exclude, query_id=str(t))
        assert got.ids.tolist() == expected
        if not expected:
            continue
        positives = set(int(i) for i in rng.choice(ids, size=int(rng.integers(1, len(ids) + 1)),
                                                   replace=False))
        for k in (1, 3, 5, 10):
            assert recall_at_k(got, positives, k) == _scalar_recall(expected, positives, k)
        lists.append(got)
        pos_sets.append(positives)
    pmap = {r.query_id: p for r, p in zip(lists, pos_sets)}
    assert mrr(lists, pmap) == pytest.approx(_scalar_mrr([r.ids.tolist() for r in lists], pos_sets),
                                             abs=1e-12)


def test_mrr_worked_example():
    lists = [RankedList(str(i), np.arange(1, 11), np.zeros(10)) for i in range(3)]
    pos = {"0": {1}, "1": {4}, "2": {10}}
    assert mrr(lists, pos) == pytest.approx((1 + 1 / 4 + 1 / 10) / 3)
    assert mrr(lists, pos) == pytest.approx(0.45)


def test_missing_positive_contributes_zero():
    r = RankedList("a", np.array([3, 1, 2]), np.zeros(3))
    assert first_positive_rank(r.ids, {9}) is None
    assert mrr([r], {"a": {9}}) == 0.0
    assert mrr([], {}) == 0.0


def test_ties_broken_by_ascending_id():
    store = EmbeddingStore(np.array([2, 5, 7]), np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]))
    assert rank(np.array([1.0, 0.0]), store).ids.tolist() == [2, 7, 5]
    assert rank(np.array([1.0, 1.0]), store).ids.tolist() == [2, 5, 7]


def test_recall_errors():
    r = RankedList("a", np.array([1, 2]), np.zeros(2))
    with pytest.raises(ValueError):
        recall_at_k(r, {1}, 0)
    with pytest.raises(ValueError):
        recall_at_k(r, set(), 1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.one_of(st.none(), st.integers(1, 30)), min_size=1, max_size=40))
def test_metrics_monotone_in_k(ranks):
    m = metrics_from_ranks(ranks)
    assert m["R@1"] <= m["R@5"] <= m["R@10"] <= 1.0
    assert m["R@1"] <= m["MRR"] <= m["R@10"] + 1.0 / 11
    assert m["n"] == len(ranks)


def test_empty_split():
    assert metrics_from_ranks([]) == {"n": 0}
    row = format_table({"empty": {"n": 0}}).splitlines()[-1]
    assert row.split() == ["empty", "-", "-", "-", "-", "0"]


def test_chance_metrics_match_simulation(query_set):
    pool = 60
    qs = [q for q in query_set.queries if len(q.positives) + len(set(q.condition_ids)) < pool][:40]
    expected = chance_metrics(qs, pool)
    rng = np.random.default_rng(0)
    sims = {"R@1": [], "R@10": [], "MRR": []}
    for q in qs:
        P = pool - len(set(q.condition_ids))
        m = len(q.positives)
        first = np.array([np.min(rng.permutation(P)[:m]) + 1 for _ in range(2000)])
        sims["R@1"].append(np.mean(first <= 1))
        sims["R@10"].append(np.mean(first <= 10))
        sims["MRR"].append(np.mean(1.0 / first))
    for k, v in sims.items():
        assert expected[k] == pytest.approx(np.mean(v), abs=0.01), k


def _poisson_binomial_sf(probs, observed):
    """P(X >= observed) for a sum of independent Bernoullis."""
    dist = np.array([1.0])
    for p in probs:
        dist = np.convolve(dist, [1 - p, p])
    return float(dist[observed:].sum())


def test_untrained_model_is_at_chance(catalog, query_set):
    enc = Encoder(EncoderConfig(vocab_size=catalog.vocab.size, seed=1))
    store = embed_pool(enc, catalog)
    queries = query_set.queries[:200]
    ranks = query_ranks(enc, catalog, queries, store)
    hits = sum(ranks[q.id] is not None and ranks[q.id] <= 10 for q in queries)
    probs = [chance_metrics([q], len(catalog))["R@10"] for q in queries]
    assert _poisson_binomial_sf(probs, hits) > 0.01


def test_evaluate_splits_and_digest(catalog, query_set):
    enc = Encoder(EncoderConfig(vocab_size=catalog.vocab.size, d=16, n_layers=1, n_heads=2))
    qs = query_set.queries[:60]
    rep = evaluate(enc, catalog, qs, splits={"first": qs[:10], "none": []})
    assert rep.splits["overall"]["n"] == 60
    assert rep.splits["first"]["n"] == 10
    assert rep.splits["none"] == {"n": 0}
    assert any(k.startswith("lang:") for k in rep.splits)
    again = evaluate(enc, catalog, qs, splits={"first": qs[:10], "none": []})
    assert rep.to_json() == again.to_json()
    assert rep.meta["store_digest"] == embed_pool(enc, catalog).digest()
