from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multicond.catalog import AttributeTable, Catalog, Product, Vocabulary
from multicond.sampler import (
    AttributeIndex, Condition, OODSpec, Query, QuerySet, RejectReason, SamplerConfig,
    SamplerStalled, attribute_uniform_sample, auto_filter, check_query, compose_query_set,
    conventional_uniform_sample, high_similarity_sample, load_queries, make_ood_splits,
    rank_by_similarity, recall_candidates, render_instruction, save_queries, shannon_entropy,
    split_train_test, violates_inequality,
)
from multicond.validation import ConfigError

VALUES = ("amber", "basalt", "cobalt", "dune")


def _hand_catalog(rows, feats=None):
    """Products in one market from (attribute dict) rows."""
    table = AttributeTable("fashion/dress", {"color": VALUES, "material": VALUES,
                                             "brand": VALUES})
    feats = feats if feats is not None else np.eye(len(rows), 4 + len(rows))
    products = tuple(
        Product(i, "fashion/dress", "en", "sg", (30,), np.asarray(feats[i])[None], dict(r))
        for i, r in enumerate(rows)
    )
    return Catalog(products, {"fashion/dress": table}, Vocabulary())


def _brute_recall(catalog, conditions):
    out = []
    for p in catalog.products:
        if any(p.id == c.product_id for c in conditions):
            continue
        ok = True
        for c in conditions:
            if p.attributes.get(c.attribute) != catalog.get(c.product_id).attributes[c.attribute]:
                ok = False
        if ok:
            out.append(p.id)
    return out


# -- recall & ranking --------------------------------------------------------

def test_recall_worked_example():
    cat = _hand_catalog([{"color": "amber"}, {"material": "cobalt"},
                         {"color": "amber", "material": "cobalt"}])
    conds = [Condition(0, "color"), Condition(1, "material")]
    assert recall_candidates(cat, conds) == [2]
    assert recall_candidates(cat, conds, AttributeIndex(cat)) == [2]


def test_recall_no_match_and_exclusion():
    cat = _hand_catalog([{"color": "amber"}, {"color": "basalt"}, {"color": "amber"},
                         {"color": "amber"}])
    assert recall_candidates(cat, [Condition(1, "color")]) == []
    assert recall_candidates(cat, [Condition(0, "color")]) == [2, 3]


def test_recall_missing_attribute_raises():
    cat = _hand_catalog([{"color": "amber"}, {"color": "basalt"}])
    with pytest.raises(ValueError):
        recall_candidates(cat, [Condition(0, "brand")])


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_recall_index_matches_scan(data):
    n = data.draw(st.integers(2, 12))
    rows = [data.draw(st.fixed_dictionaries({}, optional={
        a: st.sampled_from(VALUES[:2]) for a in ("color", "material", "brand")}))
        for _ in range(n)]
    cat = _hand_catalog(rows)
    usable = [(p.id, a) for p in cat.products for a in p.attributes]
    if not usable:
        return
    picks = data.draw(st.lists(st.sampled_from(usable), min_size=1, max_size=3))
    conds = [Condition(pid, a) for pid, a in picks]
    expected = _brute_recall(cat, conds)
    assert recall_candidates(cat, conds) == expected
    assert recall_candidates(cat, conds, AttributeIndex(cat)) == expected


def test_rank_by_similarity_cases(rng):
    cat = _hand_catalog([{"color": "amber"}] * 7, feats=rng.normal(size=(7, 5)))
    assert rank_by_similarity(cat, [3], [0]) == [3]
    same = _hand_catalog([{"color": "amber"}] * 3, feats=[[1, 0], [0, 1], [1, 0]])
    assert rank_by_similarity(same, [1, 2], [0]) == [2, 1]
    # oracle: scalar loop over candidates
    cands, conds = [1, 2, 3, 4, 5], [0, 6]
    score = {}
    for c in cands:
        fc = cat.get(c).image_features[0]
        total = 0.0
        for k in conds:
            fk = cat.get(k).image_features[0]
            total += float(fc @ fk) / (np.linalg.norm(fc) * np.linalg.norm(fk))
        score[c] = total / len(conds)
    assert rank_by_similarity(cat, cands, conds) == sorted(cands, key=lambda c: (-score[c], c))


def test_rank_ties_by_id():
    cat = _hand_catalog([{"color": "amber"}] * 4, feats=[[1, 0]] * 4)
    assert rank_by_similarity(cat, [3, 1, 2], [0]) == [1, 2, 3]


# -- instructions & filter ---------------------------------------------------

def _query(cat, conds, positives, **kw):
    values = tuple(cat.get(c.product_id).attributes[c.attribute] for c in conds)
    instr = render_instruction(cat.vocab, "en", conds, values, ("color",),
                               np.random.default_rng(0), kw.pop("text_value_prob", 0.0),
                               kw.pop("error", None))
    return Query("q", tuple(conds), values, instr, tuple(positives), "en", "fashion/dress", **kw)


@pytest.fixture
def four():
    return _hand_catalog([
        {"color": "amber", "material": "basalt"},
        {"color": "basalt", "material": "cobalt"},
        {"color": "amber", "material": "cobalt"},
        {"color": "amber", "material": "dune"},
    ])


def test_auto_filter_accepts_valid(four):
    q = _query(four, [Condition(0, "color"), Condition(1, "material")], [2])
    assert auto_filter(q, four, ("color",)) is None
    assert check_query(q, four) == []


def test_auto_filter_inaccurate(four):
    q = _query(four, [Condition(0, "color"), Condition(1, "material")], [2, 3])
    assert auto_filter(q, four, ("color",)) is RejectReason.INACCURATE


def test_auto_filter_non_visual(four):
    q = _query(four, [Condition(0, "color"), Condition(1, "material")], [2],
               error="spell_visual")
    assert auto_filter(q, four, ("color",)) is RejectReason.NON_VISUAL


def test_auto_filter_omission(four):
    q = _query(four, [Condition(0, "color"), Condition(1, "material")], [2], error="omit_name")
    assert auto_filter(q, four, ("color",)) is RejectReason.OMISSION


def test_inequality_same_attribute_equal_values():
    cat = _hand_catalog([{"color": "amber"}, {"color": "amber"}, {"color": "amber"}])
    assert violates_inequality(cat, [Condition(0, "color"), Condition(1, "color")])


def test_instruction_template_shape(four):
    q = _query(four, [Condition(0, "color"), Condition(1, "material")], [2])
    assert q.image_slots() == [0, 1]
    assert q.instruction[0][0] == "text"


# -- samplers ------------------------------------------------------------------

@pytest.mark.parametrize("sampler", [conventional_uniform_sample, attribute_uniform_sample,
                                     high_similarity_sample])
def test_samplers_emit_valid_queries(catalog, sampler):
    rng = np.random.default_rng(0)
    cfg = SamplerConfig(instruction_error_rate=0.0)
    emitted = 0
    for _ in range(150):
        q = sampler(catalog, cfg, rng)
        if q is None:
            continue
        emitted += 1
        assert check_query(q, catalog) == []
        assert set(q.positives) <= set(_brute_recall(catalog, q.conditions))
        assert len({catalog.get(i).category for i in q.positives}) == 1
    assert emitted > 100


def test_attribute_uniform_rejects_value_without_carrier():
    cat = _hand_catalog([{"color": "amber"}, {"color": "amber"}])
    cfg = SamplerConfig(max_attempts=5)
    # only "color" exists in products; most drawn (attribute, value) pairs have no carrier
    assert attribute_uniform_sample(cat, cfg, np.random.default_rng(0)) is None


def test_high_similarity_identical_pair_rejected():
    cat = _hand_catalog([{"color": "amber", "material": "basalt"},
                         {"color": "amber", "material": "basalt"},
                         {"color": "basalt", "material": "amber"}])
    q = high_similarity_sample(cat, SamplerConfig(), np.random.default_rng(0), anchor=0, neighbor=1)
    assert q is None


def test_high_similarity_color_difference():
    rows = [
        {"color": "amber", "material": "basalt"},    # A
        {"color": "cobalt", "material": "basalt"},  # B, differs from A only in color
        {"color": "cobalt", "material": "dune"},  # carries B's color, not B's material
        {"color": "dune", "material": "amber"},
    ]
    cat = _hand_catalog(rows)
    q = high_similarity_sample(cat, SamplerConfig(), np.random.default_rng(0), anchor=0, neighbor=1)
    assert q is not None
    by_attr = dict(zip((c.attribute for c in q.conditions), q.values))
    assert by_attr["color"] == "cobalt"
    assert 1 in q.positives and 1 not in q.condition_ids
    assert check_query(q, cat) == []


def _most_common_diff_share(catalog, gamma, n=5000):
    cfg = SamplerConfig(similarity_suppression=gamma, instruction_error_rate=0.0)
    rng = np.random.default_rng(11)
    counts = Counter()
    from multicond.sampler import _Context
    ctx = _Context(catalog, cfg)
    top = ctx.diff_counts().most_common(1)[0][0]
    while sum(counts.values()) < n:
        q = high_similarity_sample(catalog, cfg, rng, ctx)
        if q is not None:
            counts.update(c.attribute for c in q.conditions)
    return counts[top] / sum(counts.values())


def test_similarity_suppression_lowers_top_attribute(catalog):
    assert _most_common_diff_share(catalog, 1.0) < _most_common_diff_share(catalog, 0.0)


def test_attribute_uniform_entropy_not_lower(catalog):
    cfg = SamplerConfig(instruction_error_rate=0.0)
    hist = {}
    for name, fn in [("conv", conventional_uniform_sample), ("uni", attribute_uniform_sample)]:
        rng = np.random.default_rng(3)
        c = Counter()
        for _ in range(1500):
            q = fn(catalog, cfg, rng)
            if q is not None:
                c.update(x.attribute for x in q.conditions)
        hist[name] = shannon_entropy(c)
    assert hist["uni"] >= hist["conv"]


# -- composition ---------------------------------------------------------------

def test_compose_is_deterministic(catalog):
    a = compose_query_set(catalog, SamplerConfig(seed=9), 100)
    b = compose_query_set(catalog, SamplerConfig(seed=9), 100)
    assert [(q.conditions, q.positives, q.instruction) for q in a] == \
           [(q.conditions, q.positives, q.instruction) for q in b]
    assert a.stats == b.stats


def test_compose_invariants_and_dedup(query_set, catalog):
    assert len(query_set) == 300
    keys = [q.dedup_key for q in query_set]
    assert len(keys) == len(set(keys))
    for q in query_set:
        assert check_query(q, catalog) == []
        assert auto_filter(q, catalog) is None
    stats = query_set.stats
    assert sum(s.get("accepted", 0) for s in stats.values()) == 300


def test_compose_filter_fires(catalog):
    qs = compose_query_set(catalog, SamplerConfig(seed=2, instruction_error_rate=0.5), 100)
    filtered = sum(v for s in qs.stats.values() for k, v in s.items() if k.startswith("filtered"))
    assert filtered > 0


def test_compose_stalls_on_degenerate_catalog():
    cat = _hand_catalog([{"color": "amber"}, {"color": "basalt"}, {"color": "cobalt"}])
    with pytest.raises(SamplerStalled):
        compose_query_set(cat, SamplerConfig(stall_window=50, max_attempts=2), 10)


def test_sampler_config_validation():
    with pytest.raises(ConfigError):
        SamplerConfig(condition_count_weights=(0.5, 0.2, 0.2)).validate()
    with pytest.raises(ConfigError):
        SamplerConfig(mix=(1.0, 0.0)).validate()


# -- splits -----------------------------------------------------------------

def _synthetic_set(n, strata):
    qs = []
    for i in range(n):
        lang, cat = strata[i % len(strata)]
        qs.append(Query(f"q{i:04d}", (), (), (), (i,), lang, cat))
    return QuerySet(qs)


def test_split_preserves_strata():
    strata = [("en", "a"), ("th", "a"), ("en", "b"), ("vi", "b")]
    qs = _synthetic_set(1000, strata)
    train, test = split_train_test(qs, 0.1, seed=0)
    assert len(test) == 100 and len(train) == 900
    counts = Counter((q.language, q.category) for q in test)
    assert all(counts[s] == 25 for s in strata)
    assert not {q.id for q in train} & {q.id for q in test}
    assert all("test" in q.split_tags for q in test)


def test_split_zero_fraction_and_single_stratum():
    qs = _synthetic_set(50, [("en", "a")])
    train, test = split_train_test(qs, 0.0)
    assert len(test) == 0 and len(train) == 50
    train, test = split_train_test(qs, 0.2, seed=1)
    assert len(test) == 10


def test_split_small_stratum_errors():
    qs = _synthetic_set(11, [("en", "a")] * 10 + [("th", "b")])
    with pytest.raises(ValueError):
        split_train_test(qs, 0.3)


def test_ood_language_and_attribute(query_set, catalog):
    splits = make_ood_splits(query_set, OODSpec(languages=("th",), attributes=("color",)),
                             catalog)
    train, test = splits["language_ood:th"]
    for q in train:
        assert all(catalog.get(i).language != "th"
                   for i in list(q.condition_ids) + list(q.positives))
    assert len(test) > 0
    for q in test:
        assert all(catalog.get(i).language == "th"
                   for i in list(q.condition_ids) + list(q.positives))
    train, test = splits["attribute_ood:color"]
    assert all("color" not in {c.attribute for c in q.conditions} for q in train)
    assert not {q.id for q in train} & {q.id for q in test}


def test_ood_empty_split_errors(query_set, catalog):
    with pytest.raises(ValueError):
        make_ood_splits(query_set, OODSpec(languages=("vi",)), catalog)


def test_query_jsonl_roundtrip(tmp_path, query_set, catalog):
    path = tmp_path / "q.jsonl"
    save_queries(query_set, path, catalog)
    back = load_queries(path)
    assert [replace(q) for q in back] == list(query_set)
