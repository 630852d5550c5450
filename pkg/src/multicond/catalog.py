"""Synthetic attributed product catalog.

Products carry a closed-set attribute assignment, a tokenized title in one of
five language partitions of a shared vocabulary, and one or more synthetic
image feature vectors. Each (attribute, value) pair owns a fixed random
direction in feature space, so products that share attribute values also look
alike, which is what the similarity-ranking steps of the query samplers rely
on.
"""

from collections import Counter
from dataclasses import asdict, dataclass, field
import json
import os

import numpy as np

from .io import atomic_write_text
from .validation import (
    ConfigError,
    check_distribution,
    check_positive_int,
    check_probability,
    check_real,
)

ATTRIBUTE_POOL = (
    "color", "pattern", "shape", "material", "style", "size", "brand",
    "occasion", "season", "finish", "texture", "fit", "length", "closure",
    "neckline", "sleeve", "heel", "capacity", "power", "scent", "flavor",
    "age group", "gender", "theme", "origin", "weight", "width", "thickness",
    "handle", "lining", "strap", "collar",
)

VALUE_WORDS = (
    "amber", "basalt", "cobalt", "dune", "ember", "fern", "garnet", "hazel",
    "indigo", "jade", "kelp", "lilac", "maple", "nectar", "onyx", "pearl",
    "quartz", "russet", "sable", "teal", "umber", "velvet", "willow", "xenon",
    "yarrow", "zinc", "azure", "birch", "cedar", "dahlia", "ebony", "flint",
    "ginger", "heather", "iris", "juniper", "khaki", "lotus", "moss", "nutmeg",
)

TEMPLATE_WORDS = ("find", "product", "with", "same", "as", "and", "in", "of")

DEFAULT_CATEGORIES = (
    "fashion/dress",
    "fashion/shoes",
    "electronics/headphones",
    "home/furniture",
    "beauty/skincare",
    "food/snacks",
    "sports/equipment",
)

LANGUAGES = ("en", "id", "th", "ms", "vi")
COUNTRIES = {"en": "sg", "id": "id", "th": "th", "ms": "my", "vi": "vn"}
VISUAL_ATTRIBUTES = ("color", "pattern", "shape")
MAX_TITLE_LENGTH = 190
DISCARDED_VALUES = ("none", "skip")

PAD, EOS = 0, 1
PRODUCT_OPEN = (4, 5, 6, 7)
PRODUCT_CLOSE = (8, 9, 10, 11)
N_SPECIAL = 24


class Vocabulary:
    """Token-id layout: shared special tokens, then one disjoint block per language.

    Inside a language block the first ids name attributes, the next ids spell
    attribute values, then a few template words; the remainder are filler.
    """

    def __init__(self, size=1024, languages=LANGUAGES):
        self.size = check_positive_int(size, "vocab_size")
        self.languages = tuple(languages)
        self.block = (self.size - N_SPECIAL) // len(self.languages)
        self._n_fixed = len(ATTRIBUTE_POOL) + len(VALUE_WORDS) + len(TEMPLATE_WORDS)
        if self.block < self._n_fixed + 8:
            raise ConfigError(
                f"vocab_size={size} too small for {len(self.languages)} languages"
            )

    def base(self, language):
        return N_SPECIAL + self.languages.index(language) * self.block

    def name_token(self, language, attribute):
        return self.base(language) + ATTRIBUTE_POOL.index(attribute)

    def value_token(self, language, value):
        return self.base(language) + len(ATTRIBUTE_POOL) + VALUE_WORDS.index(value)

    def word_token(self, language, word):
        return (self.base(language) + len(ATTRIBUTE_POOL) + len(VALUE_WORDS)
                + TEMPLATE_WORDS.index(word))

    def filler_range(self, language):
        start = self.base(language) + self._n_fixed
        return start, self.base(language) + self.block

    def language_range(self, language):
        return self.base(language), self.base(language) + self.block

    def language_of(self, token):
        if token < N_SPECIAL:
            return None
        idx = (token - N_SPECIAL) // self.block
        return self.languages[idx] if idx < len(self.languages) else None

    def to_dict(self):
        return {lang: list(self.language_range(lang)) for lang in self.languages}


@dataclass(frozen=True)
class AttributeTable:
    category: str
    attributes: dict

    def __post_init__(self):
        seen = set()
        for name, values in self.attributes.items():
            _check_label(name, "attribute name")
            if name in seen:
                raise ConfigError(f"duplicate attribute {name!r} in {self.category}")
            seen.add(name)
            if len(values) < 2:
                raise ConfigError(
                    f"attribute {name!r} in {self.category} needs >= 2 values"
                )
            for v in values:
                _check_label(v, "attribute value")

    def allows(self, attribute, value):
        return value in self.attributes.get(attribute, ())


def _check_label(label, what):
    if label != label.strip().lower() or "_" in label or not label:
        raise ConfigError(f"{what} {label!r} must be lower-case, trimmed and underscore-free")


@dataclass(frozen=True, eq=False)
class Product:
    id: int
    category: str
    language: str
    country: str
    title: tuple
    image_features: np.ndarray
    attributes: dict

    @property
    def n_images(self):
        return self.image_features.shape[0]


@dataclass(frozen=True, eq=False)
class Catalog:
    products: tuple
    tables: dict
    vocab: Vocabulary
    seed: int = 0
    value_distributions: dict = field(default_factory=dict)
    presence: dict = field(default_factory=dict)

    def __post_init__(self):
        index = {}
        for i, p in enumerate(self.products):
            if p.id in index:
                raise ValueError(f"duplicate product id {p.id}")
            index[p.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self):
        return len(self.products)

    def __iter__(self):
        return iter(self.products)

    def get(self, product_id):
        return self.products[self._index[product_id]]

    def __contains__(self, product_id):
        return product_id in self._index

    @property
    def ids(self):
        return [p.id for p in self.products]

    def feature_matrix(self):
        """Mean image feature per product, rows aligned with ``self.products``."""
        return np.stack([p.image_features.mean(axis=0) for p in self.products])

    def validate(self):
        for p in self.products:
            if p.category not in self.tables:
                raise ValueError(f"product {p.id}: category {p.category!r} has no table")
            table = self.tables[p.category]
            for name, value in p.attributes.items():
                if not table.allows(name, value):
                    raise ValueError(f"product {p.id}: {name}={value!r} not in table")
            if len(p.title) > MAX_TITLE_LENGTH:
                raise ValueError(f"product {p.id}: title longer than {MAX_TITLE_LENGTH}")
        return self


@dataclass(frozen=True)
class CatalogConfig:
    categories: tuple = DEFAULT_CATEGORIES
    products_per_category: int = 300
    attributes_per_category: int = 20
    values_per_attribute: int = 20
    image_dim: int = 32
    images_per_product: int = 1
    languages: tuple = LANGUAGES
    language_weights: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    # value frequencies follow p(rank) ~ (rank + 1) ** -value_zipf
    value_zipf: float = 1.0
    # presence of the k-th most common attribute ~ max(min_presence, (k + 1) ** -presence_decay)
    presence_decay: float = 0.5
    min_presence: float = 0.2
    variant_prob: float = 0.3
    mutation_rate: float = 0.25
    noise_sigma: float = 0.05
    vocab_size: int = 1024
    title_filler: int = 4

    def validate(self):
        if not self.categories:
            raise ConfigError("catalog needs at least one category")
        check_positive_int(self.products_per_category, "products_per_category")
        check_positive_int(self.attributes_per_category, "attributes_per_category")
        if self.attributes_per_category > len(ATTRIBUTE_POOL):
            raise ConfigError(
                f"attributes_per_category must be <= {len(ATTRIBUTE_POOL)}"
            )
        check_positive_int(self.values_per_attribute, "values_per_attribute", minimum=2)
        if self.values_per_attribute > len(VALUE_WORDS):
            raise ConfigError(f"values_per_attribute must be <= {len(VALUE_WORDS)}")
        check_positive_int(self.image_dim, "image_dim")
        check_positive_int(self.images_per_product, "images_per_product")
        if not set(self.languages) <= set(LANGUAGES):
            raise ConfigError(f"languages must be drawn from {LANGUAGES}")
        if len(self.language_weights) != len(self.languages):
            raise ConfigError("language_weights must align with languages")
        check_distribution(self.language_weights, "language_weights", atol=1e-6)
        check_real(self.value_zipf, "value_zipf", 0.0)
        check_real(self.presence_decay, "presence_decay", 0.0)
        check_probability(self.min_presence, "min_presence")
        check_probability(self.variant_prob, "variant_prob")
        check_probability(self.mutation_rate, "mutation_rate")
        check_real(self.noise_sigma, "noise_sigma", 0.0)
        check_positive_int(self.title_filler, "title_filler", minimum=0)
        for c in self.categories:
            _check_label(c, "category")
        return self


def attribute_directions(dim, seed):
    """Fixed unit direction for every (attribute, value) pair of the global pool."""
    rng = np.random.default_rng([seed, 1])
    raw = rng.standard_normal((len(ATTRIBUTE_POOL), len(VALUE_WORDS), dim))
    return raw / np.linalg.norm(raw, axis=-1, keepdims=True)


def render_image(attributes, directions, rng, sigma, n_images):
    base = np.zeros(directions.shape[-1])
    for name, value in attributes.items():
        base += directions[ATTRIBUTE_POOL.index(name), VALUE_WORDS.index(value)]
    norm = np.linalg.norm(base)
    if norm > 0:
        base /= norm
    return base + sigma * rng.standard_normal((n_images, base.size))


def render_title(attributes, table, language, vocab, rng, n_filler):
    tokens = []
    for name in table.attributes:
        if name in attributes:
            tokens.append(vocab.name_token(language, name))
            tokens.append(vocab.value_token(language, attributes[name]))
    lo, hi = vocab.filler_range(language)
    tokens.extend(int(t) for t in rng.integers(lo, hi, size=n_filler))
    return tuple(tokens[:MAX_TITLE_LENGTH])


def _build_tables(config, rng):
    tables, dists, presence = {}, {}, {}
    others = [a for a in ATTRIBUTE_POOL if a not in VISUAL_ATTRIBUTES]
    values = list(VALUE_WORDS[: config.values_per_attribute])
    ranks = np.arange(config.values_per_attribute)
    zipf = (ranks + 1.0) ** -config.value_zipf
    zipf /= zipf.sum()
    for cat in config.categories:
        n_visual = min(len(VISUAL_ATTRIBUTES), config.attributes_per_category)
        picked = list(VISUAL_ATTRIBUTES[:n_visual])
        extra = config.attributes_per_category - n_visual
        if extra:
            idx = rng.choice(len(others), size=extra, replace=False)
            picked += [others[i] for i in sorted(idx)]
        tables[cat] = AttributeTable(cat, {a: tuple(values) for a in picked})
        # color is always the most common attribute; the rest get a random rank
        order = [picked[0]] + [picked[1:][i] for i in rng.permutation(len(picked) - 1)]
        presence[cat] = {
            a: max(config.min_presence, (k + 1.0) ** -config.presence_decay)
            for k, a in enumerate(order)
        }
        dists[cat] = {}
        for a in picked:
            perm = rng.permutation(len(values))
            dists[cat][a] = {values[perm[r]]: float(zipf[r]) for r in ranks}
    return tables, dists, presence


def _draw_value(dist, rng):
    vals = list(dist)
    return vals[rng.choice(len(vals), p=np.fromiter(dist.values(), float))]


def generate_catalog(config=None, seed=0):
    """Generate a reproducible synthetic catalog.

    Attribute values per (category, attribute) follow a Zipf law over a
    random value ranking; attribute presence decays with a random attribute
    rank (color always first). A fraction ``variant_prob`` of products are
    variants of an earlier product with each attribute independently
    re-drawn at ``mutation_rate``; re-draws use the same marginals, so the
    declared per-value distribution is preserved.
    """
    config = (config or CatalogConfig()).validate()
    vocab = Vocabulary(config.vocab_size, LANGUAGES)
    tables, dists, presence = _build_tables(config, np.random.default_rng([seed, 2]))
    directions = attribute_directions(config.image_dim, seed)
    rng = np.random.default_rng([seed, 3])
    lang_p = np.asarray(config.language_weights, float)
    lang_p /= lang_p.sum()

    products = []
    pid = 0
    for cat in config.categories:
        table = tables[cat]
        drawn = []
        for j in range(config.products_per_category):
            if j > 0 and rng.random() < config.variant_prob:
                parent = drawn[rng.integers(len(drawn))]
                attrs = {}
                for a in table.attributes:
                    if rng.random() < config.mutation_rate:
                        if rng.random() < presence[cat][a]:
                            attrs[a] = _draw_value(dists[cat][a], rng)
                    elif a in parent:
                        attrs[a] = parent[a]
            else:
                attrs = {
                    a: _draw_value(dists[cat][a], rng)
                    for a in table.attributes
                    if rng.random() < presence[cat][a]
                }
            if not attrs:
                first = next(iter(table.attributes))
                attrs[first] = _draw_value(dists[cat][first], rng)
            attrs = {a: attrs[a] for a in table.attributes if a in attrs}
            drawn.append(attrs)
            language = config.languages[rng.choice(len(config.languages), p=lang_p)]
            products.append(Product(
                id=pid,
                category=cat,
                language=language,
                country=COUNTRIES[language],
                title=render_title(attrs, table, language, vocab, rng, config.title_filler),
                image_features=render_image(
                    attrs, directions, rng, config.noise_sigma, config.images_per_product
                ),
                attributes=attrs,
            ))
            pid += 1
    return Catalog(tuple(products), tables, vocab, seed, dists, presence).validate()


def value_histogram(catalog):
    """Exact (attribute, value) -> count tally over all products."""
    counts = Counter()
    for p in catalog.products:
        for name, value in p.attributes.items():
            counts[(name, value)] += 1
    return dict(counts)


def attribute_histogram(catalog):
    counts = Counter()
    for p in catalog.products:
        counts.update(p.attributes.keys())
    return dict(counts)


def refine_attributes(catalog):
    """Apply the post-annotation attribute filters and return a new catalog.

    Drops, in order: ``none``/``skip`` values, attribute names absent from the
    category table, the single most frequent value of every attribute
    (ties -> lexicographically smallest value), and values seen only once.
    """
    kept = []
    for p in catalog.products:
        table = catalog.tables.get(p.category)
        attrs = {
            a: v for a, v in p.attributes.items()
            if v not in DISCARDED_VALUES and table is not None and a in table.attributes
        }
        kept.append(attrs)

    counts = Counter((a, v) for attrs in kept for a, v in attrs.items())
    most_frequent = {}
    for (a, v), n in counts.items():
        best = most_frequent.get(a)
        if best is None or n > best[1] or (n == best[1] and v < best[0]):
            most_frequent[a] = (v, n)
    dropped = {(a, v) for a, (v, _) in most_frequent.items()}
    dropped |= {pair for pair, n in counts.items() if n == 1}

    products = tuple(
        Product(
            id=p.id, category=p.category, language=p.language, country=p.country,
            title=p.title, image_features=p.image_features,
            attributes={a: v for a, v in attrs.items() if (a, v) not in dropped},
        )
        for p, attrs in zip(catalog.products, kept)
    )
    return Catalog(products, catalog.tables, catalog.vocab, catalog.seed,
                   catalog.value_distributions, catalog.presence)


# -- serialization ---------------------------------------------------------

def _category_slug(category):
    return category.replace("/", "-").replace(" ", "-")


def product_filename(product):
    return f"product_{_category_slug(product.category)}_{product.id:06d}.json"


def image_filename(product_id, image_num):
    return f"image_{product_id:06d}_{image_num}.txt"


def product_record(product):
    return {
        "product_id": product.id,
        "category": product.category,
        "language": product.language,
        "country": product.country,
        "title": list(product.title),
        "attributes": dict(product.attributes),
        "images": [image_filename(product.id, k) for k in range(product.n_images)],
    }


def save_catalog(catalog, directory, config=None):
    """Write one JSON file per product, one text vector per image, and a manifest."""
    os.makedirs(os.path.join(directory, "products"), exist_ok=True)
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    for p in catalog.products:
        atomic_write_text(
            os.path.join(directory, "products", product_filename(p)),
            json.dumps(product_record(p), indent=2, sort_keys=True) + "\n",
        )
        for k, vec in enumerate(p.image_features):
            atomic_write_text(
                os.path.join(directory, "images", image_filename(p.id, k)),
                "\n".join(repr(float(x)) for x in vec) + "\n",
            )
    manifest = {
        "format": "multicond-catalog/1",
        "seed": catalog.seed,
        "vocab_size": catalog.vocab.size,
        "languages": list(catalog.vocab.languages),
        "vocab": catalog.vocab.to_dict(),
        "tables": {c: {a: list(v) for a, v in t.attributes.items()}
                   for c, t in catalog.tables.items()},
        "value_distributions": catalog.value_distributions,
        "presence": catalog.presence,
        "products": [product_filename(p) for p in catalog.products],
        "config": _config_dict(config),
    }
    atomic_write_text(os.path.join(directory, "catalog.json"),
                      json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _config_dict(config):
    if config is None:
        return None
    d = asdict(config)
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def load_catalog(directory):
    with open(os.path.join(directory, "catalog.json")) as fh:
        manifest = json.load(fh)
    vocab = Vocabulary(manifest["vocab_size"], manifest["languages"])
    tables = {c: AttributeTable(c, {a: tuple(v) for a, v in attrs.items()})
              for c, attrs in manifest["tables"].items()}
    products = []
    for name in manifest["products"]:
        with open(os.path.join(directory, "products", name)) as fh:
            rec = json.load(fh)
        feats = []
        for img in rec["images"]:
            with open(os.path.join(directory, "images", img)) as fh:
                feats.append([float(x) for x in fh.read().split()])
        products.append(Product(
            id=rec["product_id"], category=rec["category"], language=rec["language"],
            country=rec["country"], title=tuple(rec["title"]),
            image_features=np.asarray(feats, dtype=float),
            attributes=dict(rec["attributes"]),
        ))
    return Catalog(tuple(products), tables, vocab, manifest["seed"],
                   manifest.get("value_distributions") or {},
                   manifest.get("presence") or {})
