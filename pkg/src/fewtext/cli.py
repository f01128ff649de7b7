"""Command-line entry point: train, eval, ablate, dump-reps, make-splits.

All commands are deterministic given identical configs and seeds; output
files are written with sorted keys so reruns are byte-identical.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import episodes, trainer, transport, wordrep
from . import adapter as la

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_overrides(config_dict: dict, overrides) -> dict:
    """Apply dotted key=value overrides to a parsed config dict.

    Keys must already exist in the config (sweeps may not invent keys).
    """
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        target = config_dict
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in target or not isinstance(target[part], dict):
                raise ConfigError(f"override references unknown key {key!r}")
            target = target[part]
        if parts[-1] not in target:
            raise ConfigError(f"override references unknown key {key!r}")
        target[parts[-1]] = _parse_value(raw)
    return config_dict


def load_config(path, overrides=None):
    """Parse a config file into (TrainConfig, data block)."""
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    obj = apply_overrides(obj, overrides)
    data = obj.pop("data", None)
    if data is None:
        raise ConfigError("config is missing the 'data' block")
    return trainer.TrainConfig.from_dict(obj), data


def build_data(data: dict, config: trainer.TrainConfig):
    """Materialize (train, valid, test) corpora and a label embedder."""
    kind = data.get("kind")
    if kind == "synthetic":
        seed = int(data.get("data_seed", 0))
        rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
        corpora = []
        centers = {}
        for split, key in (("train", "classes_train"), ("valid", "classes_valid"),
                           ("test", "classes_test")):
            corpus, c = episodes.gen_synthetic_corpus(
                n_classes=int(data[key]),
                samples_per_class=int(data.get("samples_per_class", 40)),
                dim=int(data.get("dim", 16)),
                class_center_scale=float(data.get("class_center_scale", 1.5)),
                intra_class_stddev=float(data.get("intra_class_stddev", 1.0)),
                rng=rng, split=split, label_prefix=split)
            corpora.append(corpus)
            centers.update(c)
        return tuple(corpora), episodes.center_label_embedder(centers)
    if kind == "files":
        table = None
        if data.get("vectors_path"):
            table = wordrep.load_word_vectors(
                data["vectors_path"], oov_policy=data.get("oov_policy", "skip"))
        corpora = episodes.load_dataset(
            data["data_path"], data["split_path"], table=table)
        embedder = None
        if table is not None:
            embedder = lambda names: wordrep.embed_label_names(table, names)
        return corpora, embedder
    raise ConfigError(f"unknown data kind {kind!r}")


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def run_train(args) -> int:
    config, data = load_config(args.config, args.set)
    (train_c, valid_c, _test_c), embedder = build_data(data, config)
    checkpoint, report = trainer.train(config, train_c, valid_c,
                                       label_embedder=embedder)
    test_report = trainer.evaluate(checkpoint, _test_c, config,
                                   label_embedder=embedder)
    report.test_acc_mean = test_report.test_acc_mean
    report.test_acc_ci95 = test_report.test_acc_ci95
    report.episodes_failed = test_report.episodes_failed
    os.makedirs(args.out, exist_ok=True)
    checkpoint.save(os.path.join(args.out, "checkpoint.json"))
    trainer.save_report(report, os.path.join(args.out, "report.json"))
    print(f"variant={report.variant} best_epoch={report.best_epoch} "
          f"test_acc={report.test_acc_mean:.4f} "
          f"+/-{report.test_acc_ci95:.4f}")
    return 0


def run_eval(args) -> int:
    config, data = load_config(args.config, args.set)
    (_train_c, _valid_c, test_c), embedder = build_data(data, config)
    checkpoint = trainer.Checkpoint.load(args.checkpoint)
    report = trainer.evaluate(checkpoint, test_c, config,
                              label_embedder=embedder)
    os.makedirs(args.out, exist_ok=True)
    trainer.save_report(report, os.path.join(args.out, "report.json"))
    print(f"variant={report.variant} test_acc={report.test_acc_mean:.4f} "
          f"+/-{report.test_acc_ci95:.4f}")
    return 0


_ABLATION_VARIANTS = (
    ("full", {"bypass_adapter": False, "bypass_qda": False}),
    ("qda-off", {"bypass_adapter": False, "bypass_qda": True}),
    ("qda-only", {"bypass_adapter": True, "bypass_qda": False}),
    ("pn", {"bypass_adapter": True, "bypass_qda": True}),
)


def run_ablate(args) -> int:
    config, data = load_config(args.config, args.set)
    rows = []
    for name, flags in _ABLATION_VARIANTS:
        variant_cfg = dataclasses.replace(config, **flags)
        (train_c, valid_c, test_c), embedder = build_data(data, variant_cfg)
        if variant_cfg.bypass_adapter:
            # No trainable parameters in play; evaluate directly.
            dim = variant_cfg.dim or train_c.dim
            checkpoint = trainer.Checkpoint(
                params=trainer.init_params(variant_cfg, dim), config=variant_cfg)
        else:
            checkpoint, _ = trainer.train(variant_cfg, train_c, valid_c,
                                          label_embedder=embedder)
        report = trainer.evaluate(checkpoint, test_c, variant_cfg,
                                  label_embedder=embedder)
        rows.append({"variant": name,
                     "test_acc_mean": report.test_acc_mean,
                     "test_acc_ci95": report.test_acc_ci95})
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "ablate.json"), {"rows": rows})
    print(f"{'variant':<10} {'accuracy':>9} {'ci95':>8}")
    for row in rows:
        print(f"{row['variant']:<10} {row['test_acc_mean']:>9.4f} "
              f"{row['test_acc_ci95']:>8.4f}")
    return 0


def run_dump_reps(args) -> int:
    config, data = load_config(args.config, args.set)
    corpora, embedder = build_data(data, config)
    corpus = {"train": corpora[0], "valid": corpora[1],
              "test": corpora[2]}[args.split]
    checkpoint = trainer.Checkpoint.load(args.checkpoint)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 4]))
    episode = episodes.sample_episode(
        corpus, config.n_way, config.k_shot, config.m_query, rng,
        label_embedder=embedder, episode_seed=config.seed)
    sup_reps, qry_reps, _, _ = la.represent_episode(
        checkpoint.params, episode, bypass=config.bypass_adapter)
    n = episode.n_way
    protos_pn = sup_reps.mean(axis=1)
    if config.bypass_qda or config.r == 0:
        protos_qda = protos_pn
    else:
        protos_qda, _ = transport.estimate_prototypes(
            [sup_reps[c] for c in range(n)], qry_reps, config.r,
            epsilon_scale=config.ot_epsilon, tol=config.ot_tol,
            max_iter=config.ot_max_iter)

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "representations.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        def emit(obj):
            json.dump(obj, fh, sort_keys=True)
            fh.write("\n")

        for c, group in enumerate(episode.support):
            for j, seq in enumerate(group):
                emit({"id": seq.source_id, "label": seq.label,
                      "rep": sup_reps[c, j].tolist(), "kind": "sample"})
        for i, seq in enumerate(episode.query):
            emit({"id": seq.source_id, "label": seq.label,
                  "rep": qry_reps[i].tolist(), "kind": "sample"})
        for c, name in enumerate(episode.label_names.names):
            emit({"id": f"proto:{name}", "label": name,
                  "rep": protos_pn[c].tolist(), "kind": "support_prototype"})
        for c, name in enumerate(episode.label_names.names):
            emit({"id": f"proto:{name}", "label": name,
                  "rep": protos_qda[c].tolist(), "kind": "qda_prototype"})
    print(f"wrote {path}")
    return 0


def run_make_splits(args) -> int:
    labels = set()
    for _lineno, obj in episodes._read_jsonl(args.data):
        labels.add(obj["label"])
    rng = np.random.default_rng(args.seed)
    split = episodes.make_split(sorted(labels), args.counts, rng)
    _write_json(args.out, split)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewtext",
        description="Episodic few-shot text classification with "
                    "label-conditioned attention and OT query augmentation")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker cap (current implementation is serial)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, checkpoint=False):
        p.add_argument("config", help="JSON config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted-key config override, repeatable")
        if checkpoint:
            p.add_argument("--checkpoint", required=True)

    common(sub.add_parser("train", help="train and evaluate"))
    common(sub.add_parser("eval", help="evaluate a checkpoint"),
           checkpoint=True)
    common(sub.add_parser("ablate", help="compare full/LA-only/QDA-only/PN"))
    p = sub.add_parser("dump-reps",
                       help="dump sample and prototype representations")
    common(p, checkpoint=True)
    p.add_argument("--split", choices=("train", "valid", "test"),
                   default="test")
    p = sub.add_parser("make-splits", help="write a random class split file")
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--counts", nargs=3, type=int, required=True,
                   metavar=("TRAIN", "VALID", "TEST"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output split file")
    return parser


_HANDLERS = {
    "train": run_train,
    "eval": run_eval,
    "ablate": run_ablate,
    "dump-reps": run_dump_reps,
    "make-splits": run_make_splits,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return _HANDLERS[args.verb](args)
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc.filename or exc}", file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, KeyError) as exc:
        print(f"error: {type(exc).__module__}.{type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
