"""Brute-force retrieval evaluation: R@1/5/10 and MRR per split."""

from dataclasses import dataclass, field
import hashlib
import json

import numpy as np

from .encoder import embed_for_retrieval

KS = (1, 5, 10)


@dataclass
class EmbeddingStore:
    ids: np.ndarray       # (P,) product ids, ascending
    vectors: np.ndarray   # (P, d) unit rows

    def __len__(self):
        return len(self.ids)

    def digest(self):
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.ids, dtype="<i8").tobytes())
        h.update(np.ascontiguousarray(self.vectors, dtype="<f8").tobytes())
        return h.hexdigest()


@dataclass
class RankedList:
    query_id: str
    ids: np.ndarray
    scores: np.ndarray


@dataclass
class MetricsReport:
    splits: dict
    config_hash: str = ""
    checkpoint_hash: str = ""
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return {"splits": self.splits, "config_hash": self.config_hash,
                "checkpoint_hash": self.checkpoint_hash, "meta": self.meta}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def table(self):
        return format_table({name: m for name, m in self.splits.items()})


def embed_pool(encoder, catalog, mode="Seq", batch_size=256):
    products = sorted(catalog.products, key=lambda p: p.id)
    vectors = embed_for_retrieval(encoder, products, mode, catalog, batch_size)
    return EmbeddingStore(np.array([p.id for p in products]), vectors)


def rank(query_embedding, store, exclude=(), query_id=""):
    """Full sort of the pool by cosine, descending, ties broken by ascending id."""
    sims = store.vectors @ np.asarray(query_embedding)
    keep = ~np.isin(store.ids, np.fromiter(exclude, dtype=store.ids.dtype, count=len(exclude)))
    ids, sims = store.ids[keep], sims[keep]
    order = np.lexsort((ids, -sims))
    return RankedList(query_id, ids[order], sims[order])


def first_positive_rank(ranked_ids, positives):
    """1-based rank of the first positive, or ``None`` if absent."""
    hits = np.flatnonzero(np.isin(ranked_ids, list(positives)))
    return int(hits[0]) + 1 if hits.size else None


def recall_at_k(ranked, positives, k):
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not positives:
        raise ValueError("positives must be non-empty")
    ids = ranked.ids if isinstance(ranked, RankedList) else np.asarray(ranked)
    return int(bool(np.isin(ids[:k], list(positives)).any()))


def mrr(ranked_lists, positives_map):
    """Mean reciprocal rank of the first positive; a missing positive contributes 0.

    ``positives_map`` maps each ranked list's ``query_id`` to its positives.
    """
    if not ranked_lists:
        return 0.0
    total = 0.0
    for r in ranked_lists:
        rk = first_positive_rank(r.ids, positives_map[r.query_id])
        total += 0.0 if rk is None else 1.0 / rk
    return total / len(ranked_lists)


def metrics_from_ranks(ranks):
    """R@k and MRR from first-positive ranks (``None`` = not retrieved)."""
    n = len(ranks)
    if n == 0:
        return {"n": 0}
    out = {f"R@{k}": sum(r is not None and r <= k for r in ranks) / n for k in KS}
    out["MRR"] = sum(0.0 if r is None else 1.0 / r for r in ranks) / n
    out["n"] = n
    return out


def query_ranks(encoder, catalog, queries, store, mode="Seq"):
    """First-positive rank per query id over the store (own condition products excluded)."""
    queries = list(queries)
    if not queries:
        return {}
    q_emb = embed_for_retrieval(encoder, queries, mode, catalog)
    ranks = {}
    for q, e in zip(queries, q_emb):
        ranked = rank(e, store, exclude=set(q.condition_ids), query_id=q.id)
        ranks[q.id] = first_positive_rank(ranked.ids, q.positives)
    return ranks


def evaluate(encoder, catalog, query_set, splits=None, mode="Seq", store=None,
             config_hash="", checkpoint_hash="", breakdowns=True):
    """Metrics overall, per named split, and per language / condition count."""
    queries = list(query_set)
    store = store or embed_pool(encoder, catalog, mode)
    ranks = query_ranks(encoder, catalog, queries, store, mode)
    out = {"overall": metrics_from_ranks(list(ranks.values()))}
    for name, split in (splits or {}).items():
        split_ids = [q.id for q in split]
        missing = [i for i in split_ids if i not in ranks]
        if missing:
            extra = query_ranks(encoder, catalog, list(split), store, mode)
            ranks.update(extra)
        out[name] = metrics_from_ranks([ranks[i] for i in split_ids])
    if breakdowns:
        for key, label in (("language", "lang"), ("n_conditions", "cond")):
            groups = {}
            for q in queries:
                groups.setdefault(getattr(q, key), []).append(ranks[q.id])
            for value in sorted(groups):
                out[f"{label}:{value}"] = metrics_from_ranks(groups[value])
    return MetricsReport(out, config_hash, checkpoint_hash,
                         {"pool_size": len(store), "store_digest": store.digest(), "mode": mode})


def chance_metrics(query_set, pool_size):
    """Expected R@k and MRR under a uniformly random ranking.

    With ``m`` positives among ``P`` candidates, P(no positive in top k) is
    ``C(P-m, k) / C(P, k)``; the first-positive rank has the matching
    hypergeometric tail, which gives the exact MRR.
    """
    rows = []
    for q in query_set:
        P = pool_size - len(set(q.condition_ids))
        m = len(q.positives)
        miss = np.ones(P + 1)
        for r in range(1, P + 1):
            # probability that none of the first r candidates is positive
            miss[r] = miss[r - 1] * max(P - m - (r - 1), 0) / (P - (r - 1))
        row = {f"R@{k}": 1.0 - miss[min(k, P)] for k in KS}
        p_first = miss[:-1] - miss[1:]
        row["MRR"] = float(np.sum(p_first / np.arange(1, P + 1)))
        rows.append(row)
    if not rows:
        return {"n": 0}
    out = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    out["n"] = len(rows)
    return out


def format_table(rows, columns=("R@1", "R@5", "R@10", "MRR")):
    """Aligned text table, values in percent."""
    width = max([len("split")] + [len(str(n)) for n in rows])
    head = f"{'split':<{width}}  " + "  ".join(f"{c:>7}" for c in columns) + f"  {'n':>6}"
    lines = [head, "-" * len(head)]
    for name, m in rows.items():
        if m.get("n", 0) == 0 or columns[0] not in m:
            cells = "  ".join(f"{'-':>7}" for _ in columns)
        else:
            cells = "  ".join(f"{100 * m[c]:7.2f}" for c in columns)
        lines.append(f"{name:<{width}}  {cells}  {m.get('n', 0):>6}")
    return "\n".join(lines)
