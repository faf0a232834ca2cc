"""Command-line entry point.

Verbs: prepare, train-gnns, extract-tokens, train-lm, eval, ablate,
sweep-t, baselines.  Settings come from a flat key=value config file with
command-line --set overrides on top (flags > file > defaults).  Artifacts
land under $GRAPHLM_RUN_DIR (default ./runs).

Exit codes: 0 success, 1 config error, 2 data error, 3 training failure.
"""

import argparse
import json
import os
import sys

from . import evalkit
from .alignment import AlignmentCheckpoint, extract_graph_tokens
from .checkpointing import save_checkpoint
from .config import load_config
from .errors import ConfigError, DataError, TemplateError, TrainingError
from .graph import save_tag
from .sft import TrainingLog


def _parse_overrides(pairs):
    overrides = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        overrides[key.strip()] = value.strip()
    return overrides


def _load(args):
    return load_config(args.config, _parse_overrides(args.set))


def _run_dir():
    path = evalkit.run_directory()
    os.makedirs(path, exist_ok=True)
    return path


def cmd_prepare(args):
    config = _load(args)
    graph, features, split = evalkit.prepare_data(config)
    run_dir = _run_dir()
    save_tag(graph, os.path.join(run_dir, "dataset.jsonl"))
    with open(os.path.join(run_dir, "split.json"), "w", encoding="utf-8") as fh:
        json.dump({"train": list(split.train), "validation": list(split.validation),
                   "test": list(split.test)}, fh)
    print(f"prepared {graph.num_nodes} nodes, {graph.num_edges} edges, "
          f"{len(graph.class_names)} classes -> {run_dir}")
    return 0


def cmd_train_gnns(args):
    config = _load(args)
    graph, features, split = evalkit.prepare_data(config)
    checkpoint = evalkit.train_stage1(config, graph, features, split)
    if checkpoint is None:
        raise ConfigError("no GNNs configured; nothing to train")
    path = os.path.join(_run_dir(), "alignment.ckpt")
    checkpoint.save(path)
    final = [entry for entry in checkpoint.log if entry["epoch"] == config.align_epochs - 1]
    losses = ", ".join(f"{config.gnns[e['gnn_index']]}={e['loss']:.4f}" for e in final)
    print(f"stage 1 done ({losses}) -> {path}")
    return 0


def cmd_extract_tokens(args):
    config = _load(args)
    graph, features, _ = evalkit.prepare_data(config)
    checkpoint = AlignmentCheckpoint.load(os.path.join(_run_dir(), "alignment.ckpt"))
    blocks = extract_graph_tokens(checkpoint, graph, features,
                                  target_id=args.node, mode=args.mode)
    out = args.out or os.path.join(_run_dir(), f"tokens_{args.mode}_{args.node}.ckpt")
    tensors = {f"block_{b.gnn_index}_{i}": vec
               for b in blocks for i, vec in enumerate(b.vectors)}
    save_checkpoint(out, {"kind": "graph-tokens", "node": args.node,
                          "mode": args.mode}, tensors)
    print(f"wrote {sum(len(b.vectors) for b in blocks)} token vectors -> {out}")
    return 0


def cmd_train_lm(args):
    config = _load(args)
    run = evalkit.run_pipeline(config)
    run_dir = _run_dir()
    if run.checkpoint is not None:
        run.checkpoint.save(os.path.join(run_dir, "alignment.ckpt"))
    adapters = {f"lora.{t}.A": a.A for t, a in run.adapters.items()}
    adapters.update({f"lora.{t}.B": a.B for t, a in run.adapters.items()})
    save_checkpoint(os.path.join(run_dir, "adapters.ckpt"),
                    {"kind": "lora-adapters", "config_digest": config.digest()},
                    adapters)
    run.vocab.save(os.path.join(run_dir, "vocab.txt"))
    run.sft_result.log.save(os.path.join(run_dir, "training_log.jsonl"))
    run.report.save(os.path.join(run_dir, "report.json"))
    print(f"stage 2 done; test accuracy {run.report.accuracy:.4f} -> {run_dir}")
    return 0


def cmd_eval(args):
    config = _load(args)
    run = evalkit.run_pipeline(config)
    path = os.path.join(_run_dir(), "report.json")
    run.report.save(path)
    print(json.dumps(run.report.to_dict(), indent=1, sort_keys=True))
    return 0


def cmd_ablate(args):
    config = _load(args)
    grid = None
    if args.grid:
        with open(args.grid, "r", encoding="utf-8") as fh:
            grid = json.load(fh)
    cells = evalkit.run_ablation(config, grid)
    run_dir = _run_dir()
    rows = []
    for cell in cells:
        rows.append({
            "gnns": list(cell.gnn_subset),
            "alignment": cell.alignment,
            "with_text": cell.with_text,
            "with_neighbor": cell.with_neighbor,
            "accuracy": cell.report.accuracy,
        })
        print(f"gnns={','.join(cell.gnn_subset) or '-':14s} aligned={cell.alignment!s:5s} "
              f"text={cell.with_text!s:5s} neighbor={cell.with_neighbor!s:5s} "
              f"acc={cell.report.accuracy:.4f}")
    with open(os.path.join(run_dir, "ablation.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
    return 0


def cmd_sweep_t(args):
    config = _load(args)
    values = [int(v) for v in args.values.split(",") if v.strip()]
    table = os.path.join(_run_dir(), "sweep_t.tsv")
    reports = evalkit.sweep_graph_tokens(values, config, table_path=table)
    for t, report in reports:
        print(f"t={t:3d} accuracy={report.accuracy:.4f}")
    print(f"plot table -> {table}")
    return 0


def cmd_baselines(args):
    config = _load(args)
    graph, features, split = evalkit.prepare_data(config)
    checkpoint = evalkit.train_stage1(config, graph, features, split)
    if checkpoint is None:
        raise ConfigError("baselines need at least one GNN")
    results = dict(evalkit.single_gnn_reports(config, graph, features, split, checkpoint))
    results.update(evalkit.classical_ensemble_reports(
        config, graph, features, split, checkpoint))
    for name, acc in results.items():
        print(f"{name:10s} accuracy={acc:.4f}")
    with open(os.path.join(_run_dir(), "baselines.json"), "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=1)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="graphlm",
                                     description="GNN ensembling through a small LM")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, **extra):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable)")
        p.set_defaults(handler=handler)
        return p

    add("prepare", cmd_prepare)
    add("train-gnns", cmd_train_gnns)
    p = add("extract-tokens", cmd_extract_tokens)
    p.add_argument("--node", type=int, required=True)
    p.add_argument("--mode", choices=("node", "graph"), default="node")
    p.add_argument("--out", default=None)
    add("train-lm", cmd_train_lm)
    add("eval", cmd_eval)
    p = add("ablate", cmd_ablate)
    p.add_argument("--grid", default=None, help="JSON list of override dicts")
    p = add("sweep-t", cmd_sweep_t)
    p.add_argument("--values", default="1,2,4,8,16")
    add("baselines", cmd_baselines)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, TemplateError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except TrainingError as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
