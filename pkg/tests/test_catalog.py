from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from multicond.catalog import (
    ATTRIBUTE_POOL, COUNTRIES, MAX_TITLE_LENGTH, N_SPECIAL, Catalog, CatalogConfig,
    AttributeTable, Product, Vocabulary, attribute_histogram, generate_catalog, load_catalog,
    product_filename, refine_attributes, save_catalog, value_histogram,
)
from multicond.validation import ConfigError

from conftest import SMALL_CATALOG


def _product(pid, attrs, category="fashion/dress"):
    return Product(pid, category, "en", "sg", (30, 31), np.zeros((1, 4)), dict(attrs))


def _catalog(attr_lists, values=("red", "blue", "green", "black")):
    table = AttributeTable("fashion/dress", {"color": values, "material": values})
    products = tuple(_product(i, a) for i, a in enumerate(attr_lists))
    return Catalog(products, {"fashion/dress": table}, Vocabulary())


def test_tiny_config_is_deterministic():
    cfg = CatalogConfig(categories=("fashion/dress",), products_per_category=3,
                        attributes_per_category=1, values_per_attribute=2, min_presence=1.0)
    a, b = generate_catalog(cfg, seed=7), generate_catalog(cfg, seed=7)
    assert len(a.products) == 3
    for p, q in zip(a.products, b.products):
        assert p.attributes == q.attributes and set(p.attributes) == {"color"}
        assert p.title == q.title
        assert np.array_equal(p.image_features, q.image_features)


def test_different_seed_changes_catalog():
    a, b = generate_catalog(SMALL_CATALOG, 1), generate_catalog(SMALL_CATALOG, 2)
    assert [p.attributes for p in a.products] != [p.attributes for p in b.products]


@pytest.mark.parametrize("field,value", [
    ("values_per_attribute", 1),
    ("categories", ()),
    ("products_per_category", 0),
    ("language_weights", (0.5, 0.5, 0.5, 0.5, 0.5)),
])
def test_invalid_configs_rejected(field, value):
    with pytest.raises(ConfigError):
        generate_catalog(replace(CatalogConfig(), **{field: value}))


def test_value_frequencies_match_declared_distribution():
    cfg = CatalogConfig(categories=("fashion/dress", "home/furniture"),
                        products_per_category=100, variant_prob=0.0)
    cat = generate_catalog(cfg, seed=1)
    for category in cfg.categories:
        products = [p for p in cat.products if p.category == category]
        for attr, dist in cat.value_distributions[category].items():
            seen = Counter(p.attributes[attr] for p in products if attr in p.attributes)
            n = sum(seen.values())
            if n < 60:
                continue
            # +-10 points on the dominant values, where counts are large enough to test
            for value, prob in dist.items():
                if prob > 0.15:
                    assert abs(seen[value] / n - prob) < 0.10, (category, attr, value)


def test_products_respect_tables_and_vocab(raw_catalog):
    vocab = raw_catalog.vocab
    raw_catalog.validate()
    for p in raw_catalog.products:
        assert p.country == COUNTRIES[p.language]
        assert 0 < len(p.title) <= MAX_TITLE_LENGTH
        assert all(vocab.language_of(t) == p.language for t in p.title)
        assert p.image_features.shape == (1, SMALL_CATALOG.image_dim)


def test_language_blocks_are_disjoint():
    v = Vocabulary(1024)
    ranges = sorted(v.language_range(lang) for lang in v.languages)
    assert ranges[0][0] == N_SPECIAL
    for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
        assert hi <= lo
    assert ranges[-1][1] <= 1024


def test_vocabulary_too_small():
    with pytest.raises(ConfigError):
        Vocabulary(100)


def test_shared_values_raise_expected_cosine(raw_catalog, rng):
    """Mean image cosine grows strictly with the number of shared attribute values."""
    by_cat = {}
    for p in raw_catalog.products:
        by_cat.setdefault(p.category, []).append(p)
    sims = {}
    for _ in range(4000):
        group = by_cat[list(by_cat)[rng.integers(len(by_cat))]]
        i, j = rng.choice(len(group), 2, replace=False)
        a, b = group[i], group[j]
        shared = sum(a.attributes.get(k) == v for k, v in b.attributes.items())
        fa, fb = a.image_features[0], b.image_features[0]
        sims.setdefault(shared, []).append(fa @ fb / np.linalg.norm(fa) / np.linalg.norm(fb))
    levels = sorted(k for k, v in sims.items() if len(v) >= 30)
    means = [np.mean(sims[k]) for k in levels]
    assert len(levels) >= 3
    assert all(x < y for x, y in zip(means, means[1:])), dict(zip(levels, means))


def test_refine_drops_skip_and_unknown_names():
    cat = _catalog([{"color": "red"}, {"color": "red"}, {"color": "blue"}, {"color": "blue"},
                    {"color": "blue"}])
    p = _product(9, {"color": "skip", "material": "none"})
    q = _product(10, {"color": "red", "weight": "red"})
    cat = Catalog(cat.products + (p, q), cat.tables, cat.vocab)
    out = refine_attributes(cat)
    assert out.get(9).attributes == {}
    assert "weight" not in out.get(10).attributes


def test_refine_worked_example():
    """{red: 50, blue: 10, green: 1} -> only blue survives."""
    attrs = [{"color": "red"}] * 50 + [{"color": "blue"}] * 10 + [{"color": "green"}]
    out = refine_attributes(_catalog(attrs))
    assert value_histogram(out) == {("color", "blue"): 10}


def test_refine_tie_breaks_lexicographically():
    attrs = [{"color": "red"}] * 3 + [{"color": "blue"}] * 3
    out = refine_attributes(_catalog(attrs))
    assert value_histogram(out) == {("color", "red"): 3}


def test_refine_empty_catalog():
    out = refine_attributes(_catalog([]))
    assert len(out) == 0 and attribute_histogram(out) == {}


@settings(max_examples=60, deadline=None)
@given(st.lists(st.fixed_dictionaries({}, optional={
    "color": st.sampled_from(["red", "blue", "green", "black", "skip"]),
    "material": st.sampled_from(["red", "blue", "green", "none"]),
}), max_size=40))
def test_refine_closure(attr_lists):
    out = refine_attributes(_catalog(attr_lists))
    counts = value_histogram(out)
    assert all(n >= 2 for n in counts.values())
    assert all(v not in ("none", "skip") for _, v in counts)
    # brute-force recount of the most-frequent rule
    before = Counter((a, v) for d in attr_lists for a, v in d.items() if v not in ("none", "skip"))
    for attr in ("color", "material"):
        vals = {v: n for (a, v), n in before.items() if a == attr}
        if vals:
            top = min(vals, key=lambda v: (-vals[v], v))
            assert (attr, top) not in counts


def test_histograms_by_tally():
    cat = _catalog([{"color": "red"}, {"color": "blue", "material": "red"}])
    assert attribute_histogram(cat) == {"color": 2, "material": 1}
    assert value_histogram(cat) == {("color", "red"): 1, ("color", "blue"): 1,
                                    ("material", "red"): 1}


def test_refined_catalog_has_no_singletons(catalog):
    assert all(n >= 2 for n in value_histogram(catalog).values())
    for p in catalog.products:
        for a, v in p.attributes.items():
            assert catalog.tables[p.category].allows(a, v)


def test_table_label_rules():
    with pytest.raises(ConfigError):
        AttributeTable("x", {"Color": ("red", "blue")})
    with pytest.raises(ConfigError):
        AttributeTable("x", {"color": ("red",)})
    with pytest.raises(ConfigError):
        AttributeTable("x", {"color": ("red", "dark_blue")})


def test_duplicate_product_ids_rejected():
    with pytest.raises(ValueError):
        Catalog((_product(1, {}), _product(1, {})), {}, Vocabulary())


def test_save_load_roundtrip(tmp_path, catalog):
    save_catalog(catalog, tmp_path, SMALL_CATALOG)
    back = load_catalog(tmp_path)
    assert back.ids == catalog.ids
    for p, q in zip(catalog.products, back.products):
        assert p.attributes == q.attributes and p.title == q.title
        assert (p.category, p.language, p.country) == (q.category, q.language, q.country)
        assert np.array_equal(p.image_features, q.image_features)
    assert (tmp_path / "products" / product_filename(catalog.products[0])).exists()
    assert product_filename(catalog.products[0]).startswith("product_fashion-dress_")


def test_attribute_pool_leads_with_visual():
    assert ATTRIBUTE_POOL[:3] == ("color", "pattern", "shape")
