"""Multi-condition query composition.

Three samplers build queries from a refined catalog:

* ``conventional_uniform_sample``: pick condition products and attributes at
  random, frequent attributes suppressed by a power law;
* ``attribute_uniform_sample``: the first condition comes from a uniformly
  drawn attribute and value, which flattens the long tail;
* ``high_similarity_sample``: a product and one of its nearest visual
  neighbours define the conditions that turn one into the other.

Every query lives in one market (category x language). Condition products and
positives are drawn from that market; positives must match every condition.
"""

from collections import Counter, defaultdict, deque
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
import json
import math

import numpy as np
from sklearn.model_selection import train_test_split

from .catalog import PRODUCT_CLOSE, PRODUCT_OPEN, VISUAL_ATTRIBUTES
from .io import atomic_write_text
from .validation import (
    ConfigError,
    check_distribution,
    check_positive_int,
    check_probability,
    check_real,
)

CONDITION_COUNTS = (2, 3, 4)
SAMPLERS = ("conventional", "attribute_uniform", "high_similarity")


class RejectReason(str, Enum):
    OMISSION = "omission"
    NON_VISUAL = "non_visual"
    INACCURATE = "inaccurate"


class SamplerStalled(RuntimeError):
    """Acceptance collapsed; the catalog cannot support the requested queries."""


@dataclass(frozen=True)
class Condition:
    product_id: int
    attribute: str


@dataclass(frozen=True)
class Query:
    id: str
    conditions: tuple
    values: tuple
    instruction: tuple
    positives: tuple
    language: str
    category: str
    sampler: str = "conventional"
    split_tags: frozenset = frozenset()

    @property
    def n_conditions(self):
        return len(self.conditions)

    @property
    def condition_ids(self):
        return tuple(c.product_id for c in self.conditions)

    @property
    def dedup_key(self):
        pairs = tuple(sorted((c.attribute, v) for c, v in zip(self.conditions, self.values)))
        return pairs, frozenset(self.positives)

    def image_slots(self):
        """Condition indices of the image placeholders, in template order."""
        return [item[1] for item in self.instruction if item[0] == "image"]

    def text_tokens(self):
        return [t for item in self.instruction if item[0] == "text" for t in item[1]]


@dataclass(frozen=True)
class SamplerConfig:
    condition_count_weights: tuple = (0.75, 0.10, 0.15)
    frequent_attribute_suppression: float = 1.0
    similarity_suppression: float = 1.0
    max_candidates_ranked: int = 50
    mix: tuple = (0.8, 0.1, 0.1)
    neighbors_k: int = 5
    visual_attributes: tuple = VISUAL_ATTRIBUTES
    text_value_prob: float = 0.3
    instruction_error_rate: float = 0.02
    max_attempts: int = 50
    stall_window: int = 2000
    seed: int = 0

    def validate(self):
        if len(self.condition_count_weights) != len(CONDITION_COUNTS):
            raise ConfigError("condition_count_weights needs one weight per count 2, 3, 4")
        check_distribution(self.condition_count_weights, "condition_count_weights", atol=1e-6)
        if len(self.mix) != len(SAMPLERS):
            raise ConfigError("mix needs one weight per sampler")
        check_distribution(self.mix, "mix", atol=1e-6)
        check_real(self.frequent_attribute_suppression, "frequent_attribute_suppression", 0.0)
        check_real(self.similarity_suppression, "similarity_suppression", 0.0)
        check_positive_int(self.max_candidates_ranked, "max_candidates_ranked")
        check_positive_int(self.neighbors_k, "neighbors_k")
        check_probability(self.text_value_prob, "text_value_prob")
        check_probability(self.instruction_error_rate, "instruction_error_rate")
        check_positive_int(self.max_attempts, "max_attempts")
        check_positive_int(self.stall_window, "stall_window")
        return self


@dataclass
class QuerySet:
    queries: list
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def subset(self, queries):
        return QuerySet(list(queries), dict(self.stats))


# -- recall & ranking ------------------------------------------------------

def recall_candidates(catalog, conditions, index=None):
    """Ids of products matching every condition's value, condition products excluded.

    With ``index`` the inverted attribute index is used; the result is
    identical to the plain scan, which defines the semantics.
    """
    required = []
    for c in conditions:
        value = catalog.get(c.product_id).attributes.get(c.attribute)
        if value is None:
            raise ValueError(f"product {c.product_id} has no attribute {c.attribute!r}")
        required.append((c.attribute, value))
    excluded = {c.product_id for c in conditions}
    if index is not None:
        return index.match(required, excluded)
    return [
        p.id for p in catalog.products
        if p.id not in excluded and all(p.attributes.get(a) == v for a, v in required)
    ]


class AttributeIndex:
    """Inverted index (attribute, value) -> sorted product ids, plus market views."""

    def __init__(self, catalog):
        self.catalog = catalog
        postings = defaultdict(set)
        markets = defaultdict(list)
        for p in catalog.products:
            for a, v in p.attributes.items():
                postings[(a, v)].add(p.id)
            markets[(p.category, p.language)].append(p.id)
        self.postings = dict(postings)
        self.markets = dict(markets)
        self.attribute_counts = Counter()
        for (a, _), ids in self.postings.items():
            self.attribute_counts[a] += len(ids)
        self._features = {p.id: _unit(p.image_features.mean(axis=0)) for p in catalog.products}
        self._neighbors = {}

    def carriers(self, attribute, value):
        return self.postings.get((attribute, value), set())

    def match(self, required, excluded=()):
        if not required:
            return sorted(set(self.catalog.ids) - set(excluded))
        sets = sorted((self.carriers(a, v) for a, v in required), key=len)
        out = set(sets[0])
        for s in sets[1:]:
            out &= s
        return sorted(out - set(excluded))

    def feature(self, product_id):
        return self._features[product_id]

    def neighbors(self, product_id, k):
        """Top-k market neighbours by image cosine, ties by ascending id."""
        key = (product_id, k)
        if key not in self._neighbors:
            p = self.catalog.get(product_id)
            ids = [i for i in self.markets[(p.category, p.language)] if i != product_id]
            if not ids:
                self._neighbors[key] = []
            else:
                sims = np.array([self._features[i] @ self._features[product_id] for i in ids])
                order = np.lexsort((np.array(ids), -sims))
                self._neighbors[key] = [ids[j] for j in order[:k]]
        return self._neighbors[key]


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def rank_by_similarity(catalog, candidate_ids, condition_product_ids):
    """Sort candidates by mean image cosine to the condition products (descending)."""
    candidate_ids = list(candidate_ids)
    if not candidate_ids:
        return []
    conds = np.stack([_unit(catalog.get(i).image_features.mean(axis=0))
                      for i in condition_product_ids])
    cands = np.stack([_unit(catalog.get(i).image_features.mean(axis=0))
                      for i in candidate_ids])
    score = (cands @ conds.T).mean(axis=1)
    order = np.lexsort((np.asarray(candidate_ids), -score))
    return [candidate_ids[i] for i in order]


# -- instructions & filtering ----------------------------------------------

def render_instruction(vocab, language, conditions, values, visual_attributes,
                       rng, text_value_prob=0.0, error=None):
    """Interleave text spans and ``<Product k>`` image spans.

    Visual attribute values are never spelled; other values are spelled with
    probability ``text_value_prob``. ``error`` deliberately breaks one rule
    ("omit_name" or "spell_visual") to emulate faulty machine annotation.
    """
    w = lambda word: vocab.word_token(language, word)  # noqa: E731
    spans = [("text", (w("find"), w("product"), w("with")))]
    for k, (cond, value) in enumerate(zip(conditions, values)):
        text = [w("same")]
        if not (error == "omit_name" and k == 0):
            text.append(vocab.name_token(language, cond.attribute))
        spell = cond.attribute not in visual_attributes and rng.random() < text_value_prob
        if spell or (error == "spell_visual" and cond.attribute in visual_attributes):
            text += [w("of"), vocab.value_token(language, value)]
        text.append(w("as"))
        spans.append(("text", tuple(text)))
        spans.append(("text", (PRODUCT_OPEN[k],)))
        spans.append(("image", k))
        closing = (PRODUCT_CLOSE[k],) + ((w("and"),) if k < len(conditions) - 1 else ())
        spans.append(("text", closing))
    return tuple(spans)


def auto_filter(query, catalog, visual_attributes=VISUAL_ATTRIBUTES, index=None):
    """Return ``None`` when the query passes, else the first failing ``RejectReason``."""
    vocab = catalog.vocab
    text = set(query.text_tokens())
    slots = set(query.image_slots())
    for k, cond in enumerate(query.conditions):
        if vocab.name_token(query.language, cond.attribute) not in text or k not in slots:
            return RejectReason.OMISSION
    for cond, value in zip(query.conditions, query.values):
        if cond.attribute in visual_attributes and vocab.value_token(query.language, value) in text:
            return RejectReason.NON_VISUAL
    try:
        matching = set(recall_candidates(catalog, query.conditions, index))
    except ValueError:
        return RejectReason.INACCURATE
    if not query.positives or not set(query.positives) <= matching:
        return RejectReason.INACCURATE
    return None


def check_query(query, catalog):
    """List every violated Query invariant (empty list = valid)."""
    problems = []
    if not 2 <= len(query.conditions) <= 4:
        problems.append("condition count outside 2..4")
    if not query.positives:
        problems.append("no positives")
    cond_ids = set(query.condition_ids)
    if cond_ids & set(query.positives):
        problems.append("positive equals a condition product")
    for c, v in zip(query.conditions, query.values):
        if catalog.get(c.product_id).attributes.get(c.attribute) != v:
            problems.append(f"condition product {c.product_id} lacks {c.attribute}={v}")
    for pid in query.positives:
        attrs = catalog.get(pid).attributes
        for c, v in zip(query.conditions, query.values):
            if attrs.get(c.attribute) != v:
                problems.append(f"positive {pid} fails {c.attribute}={v}")
    if violates_inequality(catalog, query.conditions):
        problems.append("inequality constraint")
    return problems


def violates_inequality(catalog, conditions):
    """True if another condition product already carries a condition's value.

    Covers two conditions on one attribute with equal values as a special
    case: the second product would make the first redundant.
    """
    for i, ci in enumerate(conditions):
        vi = catalog.get(ci.product_id).attributes.get(ci.attribute)
        for j, cj in enumerate(conditions):
            if i != j and cj.product_id != ci.product_id:
                if catalog.get(cj.product_id).attributes.get(ci.attribute) == vi:
                    return True
    return False


# -- samplers ----------------------------------------------------------------

class _Context:
    """Per-catalog lookup tables shared by the samplers."""

    def __init__(self, catalog, config, index=None):
        self.catalog = catalog
        self.config = config
        self.index = index or AttributeIndex(catalog)
        self.usable = [p.id for p in catalog.products if p.attributes
                       and len(self.index.markets[(p.category, p.language)]) > 1]
        self.table_pairs = sorted({(a, v) for t in catalog.tables.values()
                                   for a, vals in t.attributes.items() for v in vals})
        self.table_attributes = sorted({a for a, _ in self.table_pairs})
        self._diff_counts = None

    def attr_weights(self, attributes, gamma, counts=None):
        counts = counts or self.index.attribute_counts
        w = np.array([max(counts.get(a, 0), 1) ** -gamma for a in attributes], float)
        return w / w.sum()

    def diff_counts(self):
        """How often each attribute differs between a product and its neighbours."""
        if self._diff_counts is None:
            counts = Counter()
            k = self.config.neighbors_k
            for pid in self.usable:
                a = self.catalog.get(pid).attributes
                for nid in self.index.neighbors(pid, k):
                    b = self.catalog.get(nid).attributes
                    counts.update(x for x in b if a.get(x) != b[x])
            self._diff_counts = counts
        return self._diff_counts


def _draw_count(config, rng):
    return CONDITION_COUNTS[rng.choice(len(CONDITION_COUNTS), p=config.condition_count_weights)]


def _weighted_without_replacement(items, weights, k, rng):
    idx = rng.choice(len(items), size=k, replace=False, p=weights)
    return [items[i] for i in idx]


def _pick_carriers(ctx, pivot, attributes, rng, fixed=None):
    """Choose one distinct condition product per attribute for the given pivot.

    Each carrier matches the pivot on its own attribute and on none of the
    other chosen attributes (the inequality constraint). ``fixed`` maps an
    attribute to a pre-chosen carrier.
    """
    cat = ctx.catalog
    target = cat.get(pivot).attributes
    market = set(ctx.index.markets[(cat.get(pivot).category, cat.get(pivot).language)])
    chosen = []
    for a in attributes:
        if fixed and a in fixed:
            chosen.append(fixed[a])
            continue
        pool = sorted(
            (ctx.index.carriers(a, target[a]) & market) - {pivot} - set(chosen)
            - set((fixed or {}).values())
        )
        pool = [i for i in pool
                if all(cat.get(i).attributes.get(b) != target[b] for b in attributes if b != a)]
        if not pool:
            return None
        chosen.append(pool[rng.integers(len(pool))])
    return chosen


def _finish(ctx, pivot, conditions, rng, sampler, must_include=None):
    cat = ctx.catalog
    p = cat.get(pivot)
    if violates_inequality(cat, conditions):
        return None
    market = set(ctx.index.markets[(p.category, p.language)])
    found = [i for i in recall_candidates(cat, conditions, ctx.index) if i in market]
    if not found:
        return None
    ranked = rank_by_similarity(cat, found, [c.product_id for c in conditions])
    positives = ranked[: ctx.config.max_candidates_ranked]
    if must_include is not None and must_include not in positives:
        positives[-1] = must_include
    values = tuple(cat.get(c.product_id).attributes[c.attribute] for c in conditions)
    error = None
    if rng.random() < ctx.config.instruction_error_rate:
        error = ("omit_name", "spell_visual")[rng.integers(2)]
    instruction = render_instruction(
        cat.vocab, p.language, conditions, values, ctx.config.visual_attributes, rng,
        ctx.config.text_value_prob, error,
    )
    return Query(
        id="", conditions=tuple(conditions), values=values, instruction=instruction,
        positives=tuple(positives), language=p.language, category=p.category, sampler=sampler,
    )


def conventional_uniform_sample(catalog, config, rng, context=None, count=None):
    """Random condition products and attributes; ``None`` when every attempt fails.

    The condition count (``count``, or drawn from the config weights) is kept
    across retries, so it is never biased towards easier counts.
    """
    ctx = context or _Context(catalog, config)
    k = count or _draw_count(config, rng)
    for _ in range(config.max_attempts):
        pivot = ctx.usable[rng.integers(len(ctx.usable))]
        attrs = list(catalog.get(pivot).attributes)
        if len(attrs) < k:
            continue
        chosen = _weighted_without_replacement(
            attrs, ctx.attr_weights(attrs, config.frequent_attribute_suppression), k, rng)
        carriers = _pick_carriers(ctx, pivot, chosen, rng)
        if carriers is None:
            continue
        q = _finish(ctx, pivot, [Condition(c, a) for c, a in zip(carriers, chosen)],
                    rng, "conventional")
        if q is not None:
            return q
    return None


def attribute_uniform_sample(catalog, config, rng, context=None, count=None):
    """First condition from a uniformly drawn attribute, then a uniform value of it."""
    ctx = context or _Context(catalog, config)
    k = count or _draw_count(config, rng)
    for _ in range(config.max_attempts):
        attr = ctx.table_attributes[rng.integers(len(ctx.table_attributes))]
        values = [v for a, v in ctx.table_pairs if a == attr]
        value = values[rng.integers(len(values))]
        carriers = sorted(ctx.index.carriers(attr, value))
        if not carriers:
            continue
        first = carriers[rng.integers(len(carriers))]
        fp = catalog.get(first)
        market = ctx.index.markets[(fp.category, fp.language)]
        pivots = [i for i in market if i != first and catalog.get(i).attributes.get(attr) == value]
        if not pivots:
            continue
        pivot = pivots[rng.integers(len(pivots))]
        pattrs = catalog.get(pivot).attributes
        rest = [a for a in pattrs if a != attr and fp.attributes.get(a) != pattrs[a]]
        if len(rest) < k - 1:
            continue
        chosen = [attr] + _weighted_without_replacement(
            rest, ctx.attr_weights(rest, config.frequent_attribute_suppression), k - 1, rng)
        picked = _pick_carriers(ctx, pivot, chosen, rng, fixed={attr: first})
        if picked is None:
            continue
        q = _finish(ctx, pivot, [Condition(c, a) for c, a in zip(picked, chosen)],
                    rng, "attribute_uniform")
        if q is not None:
            return q
    return None


def high_similarity_sample(catalog, config, rng, context=None, anchor=None, neighbor=None,
                           count=None):
    """Conditions that turn a product into one of its nearest neighbours.

    Attributes on which the neighbour differs are anchored at another product
    carrying the neighbour's value, so the neighbour itself stays a positive;
    one shared attribute, when available, is anchored at the first product.
    """
    ctx = context or _Context(catalog, config)
    k = count or _draw_count(config, rng)
    attempts = 1 if anchor is not None else config.max_attempts
    for _ in range(attempts):
        a_id = anchor if anchor is not None else ctx.usable[rng.integers(len(ctx.usable))]
        if neighbor is not None:
            b_id = neighbor
        else:
            nbrs = ctx.index.neighbors(a_id, config.neighbors_k)
            if not nbrs:
                continue
            b_id = nbrs[rng.integers(len(nbrs))]
        a_attrs, b_attrs = catalog.get(a_id).attributes, catalog.get(b_id).attributes
        diff = [x for x in b_attrs if a_attrs.get(x) != b_attrs[x]]
        shared = [x for x in b_attrs if a_attrs.get(x) == b_attrs[x]]
        if not diff:
            continue
        use_shared = 1 if shared else 0
        n_diff = k - use_shared
        if len(diff) < n_diff:
            continue
        weights = ctx.attr_weights(diff, config.similarity_suppression, ctx.diff_counts())
        chosen = _weighted_without_replacement(diff, weights, n_diff, rng)
        fixed = {}
        if use_shared:
            s = shared[rng.integers(len(shared))]
            chosen = [s] + chosen
            fixed[s] = a_id
        picked = _pick_carriers(ctx, b_id, chosen, rng, fixed=fixed)
        if picked is None:
            continue
        q = _finish(ctx, b_id, [Condition(c, x) for c, x in zip(picked, chosen)],
                    rng, "high_similarity", must_include=b_id)
        if q is not None:
            return q
    return None


_SAMPLER_FUNCS = {
    "conventional": conventional_uniform_sample,
    "attribute_uniform": attribute_uniform_sample,
    "high_similarity": high_similarity_sample,
}


def compose_query_set(catalog, config, target_count, index=None):
    """Mix the samplers, filter, deduplicate and collect acceptance statistics."""
    config = config.validate()
    check_positive_int(target_count, "target_count")
    rng = np.random.default_rng(config.seed)
    ctx = _Context(catalog, config, index)
    if not ctx.usable:
        raise SamplerStalled("catalog has no product with usable attributes")
    stats = {name: Counter() for name in SAMPLERS}
    seen = set()
    queries = []
    window = deque(maxlen=config.stall_window)
    name = None
    while len(queries) < target_count:
        # sampler and condition count stay fixed until a query is accepted, so
        # rejections cannot skew the mix or the count law
        if name is None:
            name = SAMPLERS[rng.choice(len(SAMPLERS), p=config.mix)]
            k = _draw_count(config, rng)
        stats[name]["drawn"] += 1
        q = _SAMPLER_FUNCS[name](catalog, config, rng, ctx, count=k)
        accepted = False
        if q is None:
            stats[name]["no_positive"] += 1
        else:
            reason = auto_filter(q, catalog, config.visual_attributes, ctx.index)
            if reason is not None:
                stats[name][f"filtered_{reason.value}"] += 1
            elif q.dedup_key in seen:
                stats[name]["duplicate"] += 1
            else:
                seen.add(q.dedup_key)
                queries.append(replace(q, id=f"q{len(queries):06d}"))
                stats[name]["accepted"] += 1
                accepted = True
                name = None
        window.append(accepted)
        if len(window) == window.maxlen and sum(window) < 0.001 * len(window):
            raise SamplerStalled(
                f"acceptance rate below 0.1% over the last {len(window)} draws"
            )
    return QuerySet(queries, {k: dict(sorted(v.items())) for k, v in stats.items()})


# -- splits ----------------------------------------------------------------

def _stratum(query, strata):
    return tuple(getattr(query, s) for s in strata)


def split_train_test(query_set, test_fraction, strata=("language", "category"), seed=0):
    """Stratified split keeping language/category proportions in the test part."""
    test_fraction = check_probability(test_fraction, "test_fraction")
    queries = list(query_set)
    n_test = int(round(test_fraction * len(queries)))
    if n_test == 0:
        return query_set.subset(_tag(queries, "train")), query_set.subset([])
    if n_test == len(queries):
        return query_set.subset([]), query_set.subset(_tag(queries, "test"))
    labels = ["|".join(_stratum(q, strata)) for q in queries]
    counts = Counter(labels)
    stratify = labels if len(counts) > 1 else None
    if stratify is not None:
        small = [s for s, n in counts.items() if n < 2]
        if small:
            raise ValueError(f"strata too small to split: {sorted(small)[:5]}")
    train, test = train_test_split(
        queries, test_size=n_test, stratify=stratify, random_state=seed)
    train.sort(key=lambda q: q.id)
    test.sort(key=lambda q: q.id)
    return query_set.subset(_tag(train, "train")), query_set.subset(_tag(test, "test"))


def _tag(queries, label):
    return [replace(q, split_tags=q.split_tags | {label}) for q in queries]


@dataclass(frozen=True)
class OODSpec:
    languages: tuple = ()
    categories: tuple = ()
    attributes: tuple = ()


def _products(query):
    return list(query.condition_ids) + list(query.positives)


def make_ood_splits(query_set, spec, catalog):
    """One (train, ood_test) pair per held-out language, category or attribute.

    Training drops every query touching the held-out value; the OOD test keeps
    queries in which every product carries it (for attributes: queries with a
    condition on that attribute).
    """
    splits = {}
    holdouts = ([("language", v) for v in spec.languages]
                + [("category", v) for v in spec.categories]
                + [("attribute", v) for v in spec.attributes])
    for kind, value in holdouts:
        train, test = [], []
        for q in query_set:
            if kind == "attribute":
                attrs = {c.attribute for c in q.conditions}
                touches, full = value in attrs, value in attrs
            else:
                owned = [getattr(catalog.get(i), kind) == value for i in _products(q)]
                touches, full = any(owned), all(owned)
            if not touches:
                train.append(q)
            elif full:
                test.append(q)
        if not test:
            raise ValueError(f"held-out {kind}={value!r} leaves an empty OOD test split")
        name = f"{kind}_ood:{value}"
        splits[name] = (query_set.subset(train),
                        query_set.subset(_tag(test, f"ood:{kind}:{value}")))
    return splits


# -- serialization ---------------------------------------------------------

def query_record(query, catalog=None):
    rec = {
        "query_id": query.id,
        "conditions": [
            {"product_id": c.product_id, "attribute": c.attribute, "value": v}
            for c, v in zip(query.conditions, query.values)
        ],
        "instruction": [[kind, list(x) if kind == "text" else x]
                        for kind, x in query.instruction],
        "target_products": list(query.positives),
        "language": query.language,
        "category": query.category,
        "sampler": query.sampler,
        "split_tags": sorted(query.split_tags),
    }
    if catalog is not None:
        rec["region"] = catalog.get(query.positives[0]).country
    return rec


def query_from_record(rec):
    return Query(
        id=rec["query_id"],
        conditions=tuple(Condition(c["product_id"], c["attribute"]) for c in rec["conditions"]),
        values=tuple(c["value"] for c in rec["conditions"]),
        instruction=tuple((kind, tuple(x) if kind == "text" else x)
                          for kind, x in rec["instruction"]),
        positives=tuple(rec["target_products"]),
        language=rec["language"],
        category=rec["category"],
        sampler=rec.get("sampler", "conventional"),
        split_tags=frozenset(rec.get("split_tags", ())),
    )


def save_queries(query_set, path, catalog=None):
    lines = [json.dumps(query_record(q, catalog), sort_keys=True) for q in query_set]
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def load_queries(path):
    with open(path) as fh:
        return QuerySet([query_from_record(json.loads(line)) for line in fh if line.strip()])


def shannon_entropy(counts):
    total = sum(counts.values())
    return -sum((n / total) * math.log(n / total) for n in counts.values() if n)


def config_dict(config):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(config).items()}
