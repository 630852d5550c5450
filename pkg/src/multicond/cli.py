"""Command-line front end: gen-catalog, gen-queries, train, eval, ablate, audit.

Every command reads one experiment config (YAML, optional), writes its
outputs atomically under ``output_dir`` next to a ``config.resolved.yaml``,
and is byte-for-byte reproducible for a fixed config and seed.

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from .catalog import generate_catalog, load_catalog, refine_attributes, save_catalog
from .config import PRESET_OVERRIDES, load_config
from .evaluation import chance_metrics, evaluate, format_table
from .io import atomic_write_text, sha256_file
from .sampler import (SamplerStalled, compose_query_set, load_queries, make_ood_splits,
                      save_queries, split_train_test)
from .trainer import (Trainer, TrainingDiverged, build_model, config_hash, gradient_audit,
                      load_model)
from .validation import ConfigError

log = logging.getLogger("multicond")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class StageMissing(RuntimeError):
    pass


def _path(cfg, *parts):
    return os.path.join(cfg.output_dir, *parts)


def _dump_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_resolved(cfg, stage, sections):
    text = cfg.to_yaml() + f"# stage_hash: {cfg.stage_hash(*sections)}\n"
    atomic_write_text(_path(cfg, stage, "config.resolved.yaml"), text)


def _stage_current(cfg, stage, sections):
    path = _path(cfg, stage, "config.resolved.yaml")
    if not os.path.exists(path):
        return False
    with open(path) as fh:
        return f"# stage_hash: {cfg.stage_hash(*sections)}" in fh.read()


CATALOG_SECTIONS = ("catalog",)
QUERY_SECTIONS = ("catalog", "sampler", "queries", "eval")
TRAIN_SECTIONS = QUERY_SECTIONS + ("encoder", "train")


# -- stages -------------------------------------------------------------

def cmd_gen_catalog(cfg):
    catalog = refine_attributes(generate_catalog(cfg.catalog, seed=cfg.seed))
    save_catalog(catalog, _path(cfg, "catalog"), cfg.catalog)
    _write_resolved(cfg, "catalog", CATALOG_SECTIONS)
    log.info("catalog: %d products -> %s", len(catalog.products), _path(cfg, "catalog"))
    return catalog


def _load_catalog(cfg):
    if not _stage_current(cfg, "catalog", CATALOG_SECTIONS):
        raise StageMissing(f"no catalog for this config under {_path(cfg, 'catalog')}; "
                           "run gen-catalog first")
    return load_catalog(_path(cfg, "catalog"))


def held_out_filter(query_set, cfg, catalog):
    """Training queries minus every query touching an OOD hold-out."""
    spec = cfg.eval.ood_spec()
    splits = make_ood_splits(query_set, spec, catalog)
    keep = {q.id for q in query_set}
    for train, _ in splits.values():
        keep &= {q.id for q in train}
    return query_set.subset([q for q in query_set if q.id in keep])


def cmd_gen_queries(cfg, catalog=None):
    catalog = catalog or _load_catalog(cfg)
    qc = cfg.queries
    query_set = compose_query_set(catalog, cfg.sampler_config(), qc.target_count)
    train, test = split_train_test(query_set, qc.test_queries / qc.target_count, seed=cfg.seed)
    train = held_out_filter(train, cfg, catalog)
    save_queries(train, _path(cfg, "queries", "train.jsonl"), catalog)
    save_queries(test, _path(cfg, "queries", "test.jsonl"), catalog)
    _dump_json(_path(cfg, "queries", "stats.json"),
               {"sampler_stats": query_set.stats, "n_train": len(train), "n_test": len(test)})
    _write_resolved(cfg, "queries", QUERY_SECTIONS)
    log.info("queries: %d train / %d test", len(train), len(test))
    return train, test


def _load_queries(cfg, name):
    if not _stage_current(cfg, "queries", QUERY_SECTIONS):
        raise StageMissing(f"no queries for this config under {_path(cfg, 'queries')}; "
                           "run gen-queries first")
    return load_queries(_path(cfg, "queries", f"{name}.jsonl"))


def encoder_config_for(cfg, catalog, seed):
    image_dim = catalog.products[0].image_features.shape[1]
    return cfg.encoder.encoder_config(catalog.vocab.size, image_dim, seed)


def _progress(record):
    if record["step"] % 20 == 0:
        log.info("step %d lr %.2e loss %.4f", record["step"], record["lr"], record["total"])


def cmd_train(cfg, catalog=None, train_queries=None):
    catalog = catalog or _load_catalog(cfg)
    train_queries = train_queries if train_queries is not None else _load_queries(cfg, "train")
    tcfg = cfg.train_config()
    trainer = Trainer(catalog, train_queries.queries, tcfg,
                      encoder_config_for(cfg, catalog, tcfg.seed))
    curve = trainer.run(callback=_progress)
    path = _path(cfg, "train", "checkpoint.bin")
    digest = trainer.save(path)
    atomic_write_text(_path(cfg, "train", "loss_curve.jsonl"),
                      "".join(json.dumps(r, sort_keys=True) + "\n" for r in curve))
    _write_resolved(cfg, "train", TRAIN_SECTIONS)
    log.info("checkpoint %s (sha256 %s)", path, digest[:12])
    return path


def _splits(cfg, test, catalog):
    splits = {"test": test}
    for name, (_, ood_test) in make_ood_splits(test, cfg.eval.ood_spec(), catalog).items():
        splits[name] = ood_test
    return splits


def cmd_eval(cfg, checkpoint=None):
    catalog = _load_catalog(cfg)
    test = _load_queries(cfg, "test")
    checkpoint = checkpoint or _path(cfg, "train", "checkpoint.bin")
    if not os.path.exists(checkpoint):
        raise StageMissing(f"checkpoint {checkpoint} not found; run train first")
    encoder, _, meta = load_model(checkpoint)
    mode = meta["train_config"]["input_mode"]
    report = evaluate(encoder, catalog, test, _splits(cfg, test, catalog), mode=mode,
                      config_hash=meta["config_hash"], checkpoint_hash=sha256_file(checkpoint))
    report.meta["chance"] = chance_metrics(test, len(catalog.products))
    atomic_write_text(_path(cfg, "eval", "metrics.json"), report.to_json())
    atomic_write_text(_path(cfg, "eval", "metrics.txt"), report.table() + "\n")
    _write_resolved(cfg, "eval", TRAIN_SECTIONS)
    print(report.table())
    return report


# -- ablation grid ------------------------------------------------------

def ensure_data(cfg):
    """Catalog and query files for ``cfg``, regenerated only when stale."""
    if _stage_current(cfg, "catalog", CATALOG_SECTIONS):
        catalog = load_catalog(_path(cfg, "catalog"))
    else:
        catalog = cmd_gen_catalog(cfg)
    if _stage_current(cfg, "queries", QUERY_SECTIONS):
        train, test = _load_queries(cfg, "train"), _load_queries(cfg, "test")
    else:
        train, test = cmd_gen_queries(cfg, catalog)
    return catalog, train, test


def ablation_label(preset, mode, lora):
    return f"{'LoRA' if lora else 'full'}/{mode}/{preset}"


def run_ablation(cfg, catalog, train, test, presets=None, modes=None, lora_flags=None,
                 seeds=None):
    """Train and evaluate every grid cell; returns per-run and per-cell metrics."""
    presets = presets or cfg.eval.ablation_presets
    modes = modes or cfg.eval.ablation_modes
    lora_flags = cfg.eval.ablation_lora if lora_flags is None else lora_flags
    seeds = seeds or cfg.eval.seeds
    runs, cells = [], {}
    for mode in modes:
        for seed in seeds:
            tcfg = cfg.train_config(seed=seed, input_mode=mode)
            encoder, _ = build_model(encoder_config_for(cfg, catalog, seed), tcfg)
            m = evaluate(encoder, catalog, test, mode=mode, breakdowns=False).splits["overall"]
            runs.append({"cell": f"untrained/{mode}", "seed": seed, **m})
    for lora in lora_flags:
        for mode in modes:
            for preset in presets:
                for seed in seeds:
                    tcfg = cfg.train_config(seed=seed, input_mode=mode, preset=preset,
                                            use_lora=lora)
                    enc_cfg = encoder_config_for(cfg, catalog, seed)
                    trainer = Trainer(catalog, train.queries, tcfg, enc_cfg)
                    trainer.run()
                    m = evaluate(trainer.encoder, catalog, test, mode=mode,
                                 breakdowns=False).splits["overall"]
                    label = ablation_label(preset, mode, lora)
                    runs.append({"cell": label, "seed": seed,
                                 "config_hash": config_hash(tcfg, enc_cfg), **m})
                    log.info("%s seed %d: R@1 %.4f MRR %.4f", label, seed, m["R@1"], m["MRR"])
    for r in runs:
        cells.setdefault(r["cell"], []).append(r)
    summary = {}
    for cell, rows in cells.items():
        summary[cell] = {k: float(np.mean([r[k] for r in rows])) for k in ("R@1", "R@5", "R@10", "MRR")}
        summary[cell]["n"] = rows[0]["n"]
        summary[cell]["seeds"] = len(rows)
    summary["chance"] = chance_metrics(test, len(catalog.products))
    return runs, summary


def cmd_ablate(cfg):
    catalog, train, test = ensure_data(cfg)
    runs, summary = run_ablation(cfg, catalog, train, test)
    _dump_json(_path(cfg, "ablate", "ablation.json"), {"runs": runs, "summary": summary})
    table = format_table(summary)
    atomic_write_text(_path(cfg, "ablate", "ablation.txt"), table + "\n")
    _write_resolved(cfg, "ablate", TRAIN_SECTIONS)
    print(table)
    return summary


def cmd_audit(cfg):
    results = gradient_audit(seed=cfg.seed)
    rows = [{"preset": r.preset, "max_rel_error": r.max_rel_error, "checks": r.n_checks,
             "passed": r.passed()} for r in results]
    for r in rows:
        print(f"{r['preset']:<12} max rel error {r['max_rel_error']:.3e}  "
              f"{'PASS' if r['passed'] else 'FAIL'}")
    return rows


COMMANDS = {
    "gen-catalog": cmd_gen_catalog,
    "gen-queries": cmd_gen_queries,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "audit": cmd_audit,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="multicond", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", "-c", help="experiment YAML file (defaults if omitted)")
        p.add_argument("--preset", default="desk", choices=sorted(PRESET_OVERRIDES),
                       help="base settings the config file is layered on")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override one config key")
        p.add_argument("--output-dir", help="shortcut for --set output_dir=...")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "eval":
            p.add_argument("--checkpoint", help="defaults to <output_dir>/train/checkpoint.bin")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        overrides = list(args.overrides)
        if args.output_dir:
            overrides.append(("output_dir", args.output_dir))
        cfg = load_config(args.config, overrides, preset=args.preset)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.command == "eval":
            cmd_eval(cfg, args.checkpoint)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, SamplerStalled, StageMissing, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
