"""Command-line surface: gen-data, train, eval, predict, ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every command echoes its fully resolved configuration before doing work so
a run can be reproduced from its log header.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import data as dat
from . import metrics, optim
from .config import RunConfig, parse_config_file, resolve_config
from .encoders import EmbeddingTable
from .fileio import DataError
from .model import (
    FlatModel,
    HierarchicalModel,
    build_answer_space,
    load_checkpoint,
    save_checkpoint,
)
from .tensor import NumericError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(p: _Parser) -> None:
    p.add_argument("--profile", default="desk", help="desk or paper defaults")
    p.add_argument("--config", default=None, help="flat key=value config file")
    for name in ("k", "d-v", "d-w", "d-q", "d-f", "n-w", "n-c", "h-cq", "h-ap",
                 "epochs", "batch", "period", "seed", "precision"):
        p.add_argument(f"--{name}", type=int, default=None)
    p.add_argument("--lr0", type=float, default=None)
    p.add_argument("--decay", type=float, default=None)
    p.add_argument("--routing", choices=["predicted", "teacher_forced"], default=None)


def _resolve(args) -> RunConfig:
    file_values = parse_config_file(args.config) if args.config else None
    keys = ("k", "d_v", "d_w", "d_q", "d_f", "n_w", "n_c", "h_cq", "h_ap", "epochs",
            "batch", "lr0", "decay", "period", "seed", "routing", "precision")
    overrides = {k: getattr(args, k, None) for k in keys}
    return resolve_config(args.profile, file_values, overrides)


def _echo_config(cfg: RunConfig, out=None) -> None:
    line = json.dumps({"config": cfg.to_dict()}, sort_keys=True)
    print(line)
    if out is not None:
        out.write(line + "\n")
        out.flush()


def build_parser() -> _Parser:
    parser = _Parser(prog="hvqa", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--categories", type=int, default=None,
                   help="defaults to the profile's n_c")
    p.add_argument("--answers-per", type=int, default=3)
    p.add_argument("--samples-per", type=int, default=100,
                   help="records per category")
    p.add_argument("--margin", type=float, default=0.5)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_config_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--log", default=None)
    p.add_argument("--model", choices=["hierarchical", "flat"], default="hierarchical")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--report", default=None, help="path stem for .txt and .json output")

    p = sub.add_parser("predict", help="answer a single manifest record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--top", type=int, default=5)

    p = sub.add_parser("ablate", help="train hierarchical and flat models under "
                                      "one seed and compare the three metrics")
    _add_config_flags(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out-dir", required=True)
    return parser


def _load_inputs(manifest_path, embeddings_path, cfg: RunConfig | None = None):
    manifest = dat.load_manifest(manifest_path)
    table = EmbeddingTable.load(embeddings_path)
    if table.dim != manifest.dims.d_w:
        raise DataError(f"embedding dim {table.dim} differs from manifest d_w "
                        f"{manifest.dims.d_w}")
    if cfg is not None:
        if (manifest.dims.k, manifest.dims.d_v) != (cfg.k, cfg.d_v):
            raise DataError(f"manifest dims k={manifest.dims.k}, d_v={manifest.dims.d_v} "
                            f"differ from configured k={cfg.k}, d_v={cfg.d_v}")
        if manifest.n_c != cfg.n_c:
            raise DataError(f"manifest has {manifest.n_c} categories, config says {cfg.n_c}")
    return manifest, table


def _build_model(kind: str, cfg: RunConfig, manifest, table):
    space = build_answer_space(manifest.records, manifest.categories)
    rng = np.random.default_rng(cfg.seed)
    common = dict(d_v=cfg.d_v, d_q=cfg.d_q, d_f=cfg.d_f, n_w=cfg.n_w, dtype=cfg.dtype)
    if kind == "flat":
        return FlatModel.build(rng, space, table, h_flat=cfg.hidden_ap, **common)
    return HierarchicalModel.build(rng, space, table, h_cq=cfg.hidden_cq,
                                   h_ap=cfg.hidden_ap, **common)


def _train_model(kind: str, cfg: RunConfig, manifest, table, log_file=None):
    model = _build_model(kind, cfg, manifest, table)
    log_fn = None
    if log_file is not None:
        log_fn = lambda payload: optim.write_jsonl_line(log_file, payload)
    history = optim.train(model, manifest.records, epochs=cfg.epochs,
                          batch_size=cfg.batch, lr0=cfg.lr0, decay=cfg.decay,
                          period=cfg.period, seed=cfg.seed, mode=cfg.routing,
                          log_fn=log_fn)
    return model, history


def cmd_gen_data(args) -> int:
    cfg = _resolve(args)
    _echo_config(cfg)
    spec = dat.SyntheticSpec(
        categories=args.categories if args.categories is not None else cfg.n_c,
        answers_per_category=args.answers_per,
        samples_per_category=args.samples_per,
        dims={"k": cfg.k, "d_v": cfg.d_v, "d_w": cfg.d_w, "n_w": cfg.n_w},
        margin=args.margin,
        seed=cfg.seed,
    )
    result = dat.generate_synthetic(spec, args.out)
    n = len(result.manifest.records)
    print(f"wrote {n} records over {spec.categories} categories to {args.out}")
    print(f"files: {dat.MANIFEST_NAME}, {dat.FEATURES_NAME}, "
          f"{dat.EMBEDDINGS_NAME}, {dat.VOCAB_NAME}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve(args)
    log_file = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        _echo_config(cfg, log_file)
        manifest, table = _load_inputs(args.manifest, args.embeddings, cfg)
        model, history = _train_model(args.model, cfg, manifest, table, log_file)
    finally:
        if log_file is not None:
            log_file.close()
    save_checkpoint(args.checkpoint, model)
    last = history[-1].to_dict()
    print(f"epoch {last['epoch']}: " + ", ".join(
        f"{k}={v:.4f}" for k, v in last.items()
        if k != "epoch" and isinstance(v, float)))
    print(f"checkpoint written to {args.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    manifest, table = _load_inputs(args.manifest, args.embeddings)
    model = load_checkpoint(args.checkpoint, table)
    if model.d_v != manifest.dims.d_v:
        raise DataError(f"checkpoint d_v {model.d_v} differs from manifest d_v "
                        f"{manifest.dims.d_v}")
    report = metrics.evaluate(model, manifest.records)
    print(report.format_table())
    if report.category_accuracy is not None:
        print(f"category prediction accuracy: {round(report.category_accuracy, 2):.2f}")
        print(f"routing miss rate: {report.routing_miss_rate:.4f}")
    if args.report:
        with open(args.report + ".txt", "w", encoding="utf-8") as f:
            f.write(report.format_table() + "\n")
        with open(args.report + ".json", "w", encoding="utf-8") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")
        print(f"report written to {args.report}.txt and {args.report}.json")
    return 0


def cmd_predict(args) -> int:
    manifest, table = _load_inputs(args.manifest, args.embeddings)
    model = load_checkpoint(args.checkpoint, table)
    if not 0 <= args.index < len(manifest.records):
        raise DataError(f"record index {args.index} out of range; manifest holds "
                        f"{len(manifest.records)} records")
    pred = model.predict(manifest.records[args.index])
    if pred.category_name is not None:
        print(f"category: {pred.category_name}")
        print("category probabilities: "
              + " ".join(f"{p:.4f}" for p in pred.category_probs))
    print(f"answer: {pred.answer}")
    order = np.argsort(pred.answer_probs)[::-1][:args.top]
    print(f"top-{len(order)} answers:")
    for j in order:
        name = model.space.global_answers[pred.answer_ids[int(j)]]
        print(f"  {name}: {pred.answer_probs[int(j)]:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _resolve(args)
    os.makedirs(args.out_dir, exist_ok=True)
    _echo_config(cfg)
    manifest, table = _load_inputs(args.manifest, args.embeddings, cfg)

    reports = {}
    for kind in ("flat", "hierarchical"):
        log_path = os.path.join(args.out_dir, f"{kind}.log.jsonl")
        with open(log_path, "w", encoding="utf-8") as log_file:
            _echo_config(cfg, log_file)
            model, _ = _train_model(kind, cfg, manifest, table, log_file)
        save_checkpoint(os.path.join(args.out_dir, f"{kind}.ckpt"), model)
        reports[kind] = metrics.evaluate(model, manifest.records)

    rows = [("Overall", "overall"), ("Arithmetic-MPT", "arithmetic_mpt"),
            ("Harmonic-MPT", "harmonic_mpt")]
    lines = [f"{'metric':<16}  {'baseline':>10}  {'hierarchical':>12}"]
    for label, attr in rows:
        b = getattr(reports["flat"], attr)
        h = getattr(reports["hierarchical"], attr)
        lines.append(f"{label:<16}  {round(b, 2):>10.2f}  {round(h, 2):>12.2f}")
    table_text = "\n".join(lines)
    print(table_text)
    with open(os.path.join(args.out_dir, "comparison.txt"), "w", encoding="utf-8") as f:
        f.write(table_text + "\n")
    with open(os.path.join(args.out_dir, "comparison.json"), "w", encoding="utf-8") as f:
        json.dump({kind: rep.to_dict() for kind, rep in reports.items()},
                  f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"artifacts written to {args.out_dir}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (DataError, FileNotFoundError, ValueError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
