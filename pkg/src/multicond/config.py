"""Experiment configuration: one YAML file with a section per pipeline stage.

Unknown keys and bad values are reported with the file line they came from.
Dotted overrides (``train.lr=3e-3``) are applied on top of the file.
"""

from dataclasses import asdict, dataclass, field, fields, replace
import hashlib
import json

import yaml

from .catalog import CatalogConfig
from .encoder import EncoderConfig, MODES
from .objective import PRESETS
from .sampler import OODSpec, SamplerConfig
from .trainer import TrainConfig
from .validation import ConfigError, check_positive_int

# learning rate of the desk preset; the full-scale 1e-5 does not move a
# randomly initialised toy encoder within one epoch
DESK_LR = 3e-3
# adapters at ten times DESK_LR overshoot; about three times learns
DESK_LORA_LR = 1e-2


@dataclass(frozen=True)
class QueryConfig:
    target_count: int = 5500
    test_queries: int = 500

    def validate(self):
        check_positive_int(self.target_count, "target_count")
        check_positive_int(self.test_queries, "test_queries", minimum=0)
        if self.test_queries >= self.target_count:
            raise ConfigError("test_queries must be smaller than target_count")
        return self


@dataclass(frozen=True)
class ModelConfig:
    """Encoder shape; vocabulary size, image width and seed come from elsewhere."""
    d: int = 64
    n_slots: int = 4
    n_layers: int = 2
    n_heads: int = 4
    ffn_mult: int = 2
    max_len: int = 256

    def encoder_config(self, vocab_size, image_dim, seed):
        return EncoderConfig(d=self.d, image_dim=image_dim, n_slots=self.n_slots,
                             n_layers=self.n_layers, n_heads=self.n_heads,
                             ffn_mult=self.ffn_mult, vocab_size=vocab_size,
                             max_len=self.max_len, seed=seed)

    def validate(self):
        self.encoder_config(1024, 32, 0).validate()
        return self


@dataclass(frozen=True)
class EvalConfig:
    ood_languages: tuple = ()
    ood_categories: tuple = ()
    ood_attributes: tuple = ()
    seeds: tuple = (0, 1, 2)
    ablation_presets: tuple = tuple(PRESETS)
    ablation_modes: tuple = MODES
    ablation_lora: tuple = (False, True)

    def ood_spec(self):
        return OODSpec(tuple(self.ood_languages), tuple(self.ood_categories),
                       tuple(self.ood_attributes))

    def validate(self):
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        for s in self.seeds:
            check_positive_int(s, "seeds", minimum=0)
        for p in self.ablation_presets:
            if p not in PRESETS:
                raise ConfigError(f"ablation_presets: unknown preset {p!r}")
        for m in self.ablation_modes:
            if m not in MODES:
                raise ConfigError(f"ablation_modes: unknown mode {m!r}")
        for flag in self.ablation_lora:
            if not isinstance(flag, bool):
                raise ConfigError("ablation_lora entries must be true or false")
        return self


SECTIONS = {
    "catalog": CatalogConfig,
    "sampler": SamplerConfig,
    "queries": QueryConfig,
    "encoder": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}
# seeds are set once at the top level
_DERIVED = {"sampler": {"seed"}, "train": {"seed"}}

PRESET_OVERRIDES = {
    "desk": {"train.lr": DESK_LR, "train.lora_lr": DESK_LORA_LR},
    # a few minutes end to end, for smoke runs of the whole ablation
    "smoke": {
        "train.lr": DESK_LR,
        "train.lora_lr": DESK_LORA_LR,
        "catalog.categories": ["fashion/dress", "home/furniture"],
        "catalog.products_per_category": 100,
        "queries.target_count": 700,
        "queries.test_queries": 100,
        "train.global_batch": 32,
        "encoder.d": 32,
        "encoder.n_layers": 1,
        "eval.seeds": [0],
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    catalog: CatalogConfig = CatalogConfig()
    sampler: SamplerConfig = SamplerConfig()
    queries: QueryConfig = QueryConfig()
    encoder: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig(lr=DESK_LR, lora_lr=DESK_LORA_LR)
    eval: EvalConfig = EvalConfig()
    seed: int = 0
    output_dir: str = "runs/default"
    source: str = field(default="<defaults>", compare=False)

    def validate(self):
        check_positive_int(self.seed, "seed", minimum=0)
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    # -- seeded views used by the pipeline ---------------------------------

    def sampler_config(self):
        return replace(self.sampler, seed=self.seed)

    def train_config(self, seed=None, **overrides):
        return replace(self.train, seed=self.seed if seed is None else seed, **overrides)

    def to_dict(self):
        out = {}
        for name in SECTIONS:
            d = asdict(getattr(self, name))
            for k in _DERIVED.get(name, ()):
                d.pop(k, None)
            out[name] = {k: _plain(v) for k, v in d.items()}
        out["seed"] = self.seed
        out["output_dir"] = self.output_dir
        return out

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=None)

    def stage_hash(self, *sections):
        """Hash of the sections a pipeline stage depends on (plus the seed)."""
        d = self.to_dict()
        payload = {s: d[s] for s in sections}
        payload["seed"] = self.seed
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    return v


def _where(node, source):
    if node is None:
        return source
    m = node.start_mark
    return f"{source}:{m.line + 1}:{m.column + 1}"


def _coerce(value, default, where, key):
    """Match YAML scalars and lists to the type of the dataclass default."""
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: {key} must be a list")
        return tuple(value)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: {key} must be true or false")
        return value
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if (default is None or isinstance(default, float)) and isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            pass
    return value


def _node_map(node):
    """key -> (key node, value node) for a YAML mapping node."""
    if node is None:
        return {}
    if not isinstance(node, yaml.MappingNode):
        raise ConfigError(f"{_where(node, '<config>')}: expected a mapping")
    return {k.value: (k, v) for k, v in node.value}


def _set_dotted(raw, dotted, value):
    parts = dotted.split(".")
    cur = raw
    for p in parts[:-1]:
        nxt = cur.setdefault(p, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"--set {dotted}: {p} is not a section")
        cur = nxt
    cur[parts[-1]] = value


def parse_override(text):
    """``section.key=value`` with the value parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, value = text.split("=", 1)
    if not key.strip():
        raise ConfigError(f"override {text!r} has an empty key")
    return key.strip(), yaml.safe_load(value) if value.strip() else None


def build_config(raw, nodes=None, source="<config>"):
    """ExperimentConfig from plain dicts; ``nodes`` supplies line marks."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: top level must be a mapping")
    top = _node_map(nodes)
    allowed = set(SECTIONS) | {"seed", "output_dir"}
    for key in raw:
        if key not in allowed:
            where = _where(top.get(key, (None,))[0], source)
            raise ConfigError(f"{where}: unknown key {key!r}; expected one of {sorted(allowed)}")
    kwargs = {}
    for name in ("seed", "output_dir"):
        if name in raw:
            kwargs[name] = raw[name]
    for name, cls in SECTIONS.items():
        section = raw.get(name) or {}
        sec_nodes = _node_map(top[name][1]) if name in top else {}
        sec_where = _where(top[name][0], source) if name in top else source
        if not isinstance(section, dict):
            raise ConfigError(f"{sec_where}: section {name!r} must be a mapping")
        base = ExperimentConfig.__dataclass_fields__[name].default
        names = {f.name for f in fields(cls)} - _DERIVED.get(name, set())
        values = {}
        for key, value in section.items():
            where = _where(sec_nodes.get(key, (None,))[0], source)
            if key not in names:
                raise ConfigError(
                    f"{where}: unknown key {key!r} in section {name!r}; "
                    f"expected one of {sorted(names)}")
            values[key] = _coerce(value, getattr(base, key), where, f"{name}.{key}")
        obj = replace(base, **values)
        try:
            obj.validate()
        except ConfigError as exc:
            culprit = next((k for k in sorted(values, key=len, reverse=True) if k in str(exc)), None)
            where = _where(sec_nodes[culprit][0], source) if culprit in sec_nodes else sec_where
            raise ConfigError(f"{where}: {name}: {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{sec_where}: {name}: {exc}") from None
        kwargs[name] = obj
    cfg = ExperimentConfig(source=source, **kwargs)
    try:
        check_positive_int(cfg.seed, "seed", minimum=0)
    except ConfigError as exc:
        raise ConfigError(f"{_where(top.get('seed', (None,))[0], source)}: {exc}") from None
    if not isinstance(cfg.output_dir, str) or not cfg.output_dir:
        raise ConfigError(f"{source}: output_dir must be a non-empty string")
    return cfg


def load_config(path=None, overrides=(), preset="desk"):
    """Read a YAML experiment file (or start from defaults) and apply overrides.

    Precedence: named preset < file < ``overrides``.
    """
    raw, nodes, source = {}, None, "<defaults>"
    if path is not None:
        source = str(path)
        try:
            with open(path) as fh:
                text = fh.read()
            nodes = yaml.compose(text)
            raw = yaml.safe_load(text) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    if preset not in PRESET_OVERRIDES:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESET_OVERRIDES)}")
    merged = {}
    for key, value in PRESET_OVERRIDES[preset].items():
        _set_dotted(merged, key, value)
    for key, value in raw.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    for text in overrides:
        key, value = parse_override(text) if isinstance(text, str) else text
        _set_dotted(merged, key, value)
    return build_config(merged, nodes, source)
