"""Command-line entry point: train, sweep, count-params, gradcheck, eval."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .adapter import count_tunable_params
from .backbone import VideoViT
from .checkpoint import load_checkpoint, read_checkpoint_header, save_checkpoint
from .config import (ExperimentConfig, config_echo, experiment_from_values,
                     load_experiment_config, with_overrides)
from .data import synth_dataset
from .errors import (CheckpointError, ConfigError, NonFiniteError,
                     TrainingDiverged, UsageError)
from .gradcheck import gradcheck_model, randomize_trainable
from .reports import write_records
from .training import backbone_digest, evaluate_model, train

SWEEP_KINDS = ("temporal_conv", "global_position", "local_position")


def _dataset_for(exp: ExperimentConfig):
    m = exp.model
    return synth_dataset(exp.train.seed, m.classes, exp.clips_per_class,
                         m.frames, m.height, m.width, exp.noise)


def _build_model(exp: ExperimentConfig, f64: bool) -> VideoViT:
    return VideoViT(exp.model, seed=exp.train.seed,
                    dtype=np.float64 if f64 else np.float32)


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def cmd_train(args) -> int:
    exp = with_overrides(load_experiment_config(args.config), args.seed, args.out)
    os.makedirs(exp.out_dir, exist_ok=True)
    model = _build_model(exp, args.f64)
    data = _dataset_for(exp)
    result = train(model, data, exp.train,
                   log_path=os.path.join(exp.out_dir, "metrics.jsonl"), echo=True)
    save_checkpoint(model, os.path.join(exp.out_dir, "checkpoint.bin"), echo=config_echo(exp))
    counts = count_tunable_params(model)
    with open(os.path.join(exp.out_dir, "params.json"), "w", encoding="utf-8") as fh:
        json.dump({"groups": counts.groups, "trainable": counts.trainable,
                   "total": counts.total, "ratio": counts.ratio}, fh, indent=2, sort_keys=True)
    r = result.report
    print(f"done: best epoch {r.best_epoch}  UAR {r.uar:.4f}  WAR {r.war:.4f}  "
          f"tunable {r.trainable_params:,}/{r.total_params:,} ({r.param_ratio:.2%})  "
          f"wall {r.wall_clock_s:.1f}s")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    header = read_checkpoint_header(args.checkpoint)
    from .config import experiment_from_echo
    exp = experiment_from_echo(header["config"])
    data = _dataset_for(exp)
    m = evaluate_model(model, data)
    print(f"UAR {m.uar:.4f}  WAR {m.war:.4f}")
    for c, r in enumerate(m.per_class_recall):
        print(f"  class {c}: recall {'n/a' if r is None else f'{r:.4f}'}")
    return 0


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def _range_label(blocks) -> str:
    lo, hi = blocks[0], blocks[-1]
    return str(lo) if lo == hi else f"{lo}-{hi}"


def sweep_cells(kind: str, exp: ExperimentConfig) -> list[tuple[str, dict]]:
    """Cell labels plus config-key overrides for one sweep family."""
    if kind == "temporal_conv":
        return [
            ("ta", {"adapter.variant": "none", "train.freeze": "temporal_aggregation"}),
            ("linear_probe", {"adapter.variant": "none", "train.freeze": "linear_probe"}),
            ("dw_conv3d", {"adapter.variant": "dw_conv3d", "train.freeze": "adapter"}),
            ("d2_conv3d", {"adapter.variant": "d2_conv3d", "train.freeze": "adapter"}),
        ]
    variant = exp.model.adapter.variant
    if variant == "none":
        variant = "d2_conv3d"
    if kind == "global_position":
        depth = exp.model.depth
        if depth < 3:
            raise ConfigError(f"global_position sweep needs depth >= 3, got {depth}")
        thirds = [list(part) for part in np.array_split(np.arange(1, depth + 1), 3)]
        subsets = [thirds[0], thirds[1], thirds[2], thirds[1] + thirds[2],
                   thirds[0] + thirds[1] + thirds[2]]
        return [
            (_range_label(blocks),
             {"adapter.variant": variant, "train.freeze": "adapter",
              "adapter.blocks": ",".join(map(str, blocks))})
            for blocks in subsets
        ]
    if kind == "local_position":
        return [
            (pos, {"adapter.variant": variant, "train.freeze": "adapter",
                   "adapter.position": pos})
            for pos in ("after_mlp", "after_mhsa", "before_mhsa")
        ]
    raise UsageError(f"unknown sweep kind {kind!r}; expected one of {SWEEP_KINDS}")


def _run_sweep_cell(payload) -> dict:
    kind, label, values, f64 = payload
    exp = experiment_from_values(values)
    model = _build_model(exp, f64)
    data = _dataset_for(exp)
    result = train(model, data, exp.train)
    r = result.report
    return {
        "kind": kind,
        "cell": label,
        "uar": r.uar,
        "war": r.war,
        "trainable_params": r.trainable_params,
        "total_params": r.total_params,
        "backbone_sha256": backbone_digest(model),
    }


def run_sweep(kind: str, exp: ExperimentConfig, f64: bool = False,
              parallel: int = 0) -> list[dict]:
    base = config_echo(exp)
    payloads = []
    for label, overrides in sweep_cells(kind, exp):
        values = dict(base)
        values.pop("out.dir", None)
        values.update(overrides)
        payloads.append((kind, label, values, f64))
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            return list(pool.map(_run_sweep_cell, payloads))
    return [_run_sweep_cell(p) for p in payloads]


def cmd_sweep(args) -> int:
    exp = with_overrides(load_experiment_config(args.config), args.seed, args.out)
    rows = run_sweep(args.kind, exp, f64=args.f64, parallel=args.parallel)
    os.makedirs(exp.out_dir, exist_ok=True)
    write_records(rows, os.path.join(exp.out_dir, f"sweep_{args.kind}.jsonl"))
    width = max(len(r["cell"]) for r in rows)
    print(f"{'cell':<{width}}  {'UAR':>8}  {'WAR':>8}  {'tunable':>12}")
    for r in rows:
        print(f"{r['cell']:<{width}}  {r['uar']:>8.4f}  {r['war']:>8.4f}  {r['trainable_params']:>12,}")
    return 0


# ---------------------------------------------------------------------------
# counting and verification
# ---------------------------------------------------------------------------

def cmd_count_params(args) -> int:
    exp = load_experiment_config(args.config)
    counts = count_tunable_params(exp.model, mode=exp.train.freeze)
    if args.json:
        print(json.dumps({"groups": counts.groups, "trainable": counts.trainable,
                          "total": counts.total, "ratio": counts.ratio}, sort_keys=True))
        return 0
    adapters = sum(g["params"] for name, g in counts.groups.items() if name.startswith("adapter."))
    dilation = sum(g["params"] for name, g in counts.groups.items() if name.startswith("dilation."))
    print(f"{'group':<24}{'params':>14}  trainable")
    for name, g in counts.groups.items():
        print(f"{name:<24}{g['params']:>14,}  {'yes' if g['trainable'] else 'no'}")
    print(f"{'-' * 50}")
    print(f"{'all adapters':<24}{adapters:>14,}")
    print(f"{'all dilation heads':<24}{dilation:>14,}")
    print(f"{'trainable':<24}{counts.trainable:>14,}")
    print(f"{'total':<24}{counts.total:>14,}")
    print(f"{'ratio':<24}{counts.ratio:>14.4%}")
    return 0


def cmd_gradcheck(args) -> int:
    exp = with_overrides(load_experiment_config(args.config), args.seed, None)
    model = VideoViT(exp.model, seed=exp.train.seed, dtype=np.float64)  # 64-bit forced
    from .training import apply_freeze
    apply_freeze(model, exp.train.freeze)
    randomize_trainable(model, exp.train.seed)
    data = _dataset_for(exp)
    clips = data.clips[:args.samples].astype(np.float64)
    labels = data.labels[:args.samples]
    errors = gradcheck_model(model, clips, labels, eps=args.eps)
    failing = []
    for group in sorted(errors):
        ok = errors[group] <= args.tolerance
        print(f"{group:<24} max rel err {errors[group]:.3e}  [{'ok' if ok else 'FAIL'}]")
        if not ok:
            failing.append(group)
    if failing:
        print(f"gradcheck FAILED for groups: {', '.join(failing)}", file=sys.stderr)
        return 1
    print(f"gradcheck passed at tolerance {args.tolerance:g}")
    return 0


# ---------------------------------------------------------------------------
# argument plumbing
# ---------------------------------------------------------------------------

def _add_common(p, config_required=True):
    p.add_argument("--config", required=config_required, help="experiment config file")
    p.add_argument("--seed", type=int, default=None, help="override train.seed")
    p.add_argument("--out", default=None, help="override out.dir")
    p.add_argument("--f64", action="store_true", help="build the model in float64 (verification precision)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feadapter",
        description="Train and inspect adapter-equipped frame-wise video classifiers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train per the config and write artifacts")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run an ablation sweep family")
    _add_common(p)
    p.add_argument("--kind", required=True, choices=SWEEP_KINDS)
    p.add_argument("--parallel", type=int, default=0, help="run cells in N worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("count-params", help="itemized parameter report")
    p.add_argument("--config", required=True)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gradcheck", help="backward vs finite differences on a small model")
    _add_common(p)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=2, help="clips in the check batch")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="evaluate a checkpoint on its echoed dataset")
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, UsageError, TrainingDiverged, NonFiniteError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
