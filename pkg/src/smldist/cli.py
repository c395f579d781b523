"""``smldist`` command-line driver.

Exit codes: 0 success, 2 configuration error, 3 data or shape error,
4 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError, RunConfig, load_config, load_windows, prepare_splits
from .core import NumericError, ShapeError
from .data import DataError, WindowSet, synth_generate, write_csv
from .distill import smldist, train_teacher
from .metrics import cost_summary, evaluate_logits
from .nn import build_network

logger = logging.getLogger("smldist")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to python, NaN/inf to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path: Path, obj) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _print_table(rows: list[tuple[str, object]]):
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        if isinstance(v, float):
            v = f"{v:.4f}"
        print(f"{k:<{width}}  {v}")


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.seeded(args.seed)
    cfg.validate()
    out = Path(args.out) if args.out else Path(cfg.out)
    return cfg, out


def _scores(net, ws) -> dict:
    return evaluate_logits(net.predict(ws.X), ws.y, net.n_classes)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig, out: Path) -> dict:
    streams = synth_generate(cfg.synth)
    csv_path = write_csv(streams, out / "data.csv")
    manifest = {
        "csv": csv_path.name,
        "class_frequencies": dict(enumerate(cfg.synth.frequencies)),
        "subjects": sorted(streams),
        "synth": cfg.synth.to_dict(),
    }
    write_json(out / "synth_manifest.json", manifest)
    _print_table([("csv", str(csv_path)), ("subjects", len(streams)), ("classes", cfg.synth.n_classes)])
    return manifest


def cmd_teach(cfg: RunConfig, out: Path) -> dict:
    train, val, scaler = prepare_splits(cfg)
    C, L = train.X.shape[1:]
    net = build_network(cfg.teacher, C, L, cfg.n_classes, seed=cfg.seed)
    net, report = train_teacher(net, train, val, cfg.teacher_train)
    scores = _scores(net, val)
    costs = cost_summary(net)
    ckpt_io.save(
        out / "teacher.ckpt",
        Checkpoint.from_network(net, scaler, {"val_accuracy": scores["accuracy"], "val_f1_macro": scores["f1_macro"]},
                                {"role": "teacher", "seed": cfg.seed}),
    )
    result = {"role": "teacher", "seed": cfg.seed, "val": scores, **costs, "train_report": report.to_dict()}
    write_json(out / "teacher_report.json", result)
    _print_table([("teacher val accuracy", scores["accuracy"]), ("val f1 macro", scores["f1_macro"]),
                  ("params", costs["params"]), ("macs", costs["macs"]), ("best epoch", report.best_epoch)])
    return result


def _load_teacher(path):
    if path is None:
        raise ConfigError("--teacher: a teacher checkpoint is required")
    if not Path(path).is_file():
        raise ConfigError(f"--teacher: checkpoint {str(path)!r} does not exist")
    ck = ckpt_io.load(path)
    return ck, ck.network()


def _distill_one(cfg: RunConfig, teacher_ck: Checkpoint, teacher, student_cfg, out_name: str, out: Path) -> dict:
    train, val, scaler = prepare_splits(cfg, teacher_ck.scaler_params())
    C, L = train.X.shape[1:]
    student = build_network(student_cfg, C, L, teacher.n_classes, seed=cfg.seed + 1000)
    student, report = smldist(teacher, student, train, val, cfg.distill)
    scores = _scores(student, val)
    costs = cost_summary(student)
    ckpt_io.save(
        out / out_name,
        Checkpoint.from_network(student, scaler, {"val_accuracy": scores["accuracy"], "val_f1_macro": scores["f1_macro"]},
                                {"role": "student", "seed": cfg.seed, "mode": report.mode}),
    )
    return {
        "checkpoint": out_name,
        "mode": report.mode,
        "flags": report.flags,
        "val": scores,
        **costs,
        "teacher": cost_summary(teacher),
        "train_report": report.to_dict(),
    }


def cmd_distill(cfg: RunConfig, out: Path, teacher_path) -> dict:
    teacher_ck, teacher = _load_teacher(teacher_path)
    result = _distill_one(cfg, teacher_ck, teacher, cfg.student, "student.ckpt", out)
    result["seed"] = cfg.seed
    write_json(out / "distill_report.json", result)
    _print_table([("mode", result["mode"]), ("student val accuracy", result["val"]["accuracy"]),
                  ("val f1 macro", result["val"]["f1_macro"]), ("params", result["params"]), ("macs", result["macs"])])
    return result


def cmd_sweep(cfg: RunConfig, out: Path, teacher_path) -> dict:
    teacher_ck, teacher = _load_teacher(teacher_path)
    points = []
    for wm in cfg.sweep.width:
        for dm in cfg.sweep.depth:
            name = f"student_w{wm:g}_d{dm:g}.ckpt"
            r = _distill_one(cfg, teacher_ck, teacher, cfg.student.scaled(wm, dm), name, out / "sweep")
            r.update(width_multiplier=wm, depth_multiplier=dm)
            r["compression_ratio"] = r["teacher"]["params"] / r["params"]
            points.append(r)
    result = {"seed": cfg.seed, "points": points}
    write_json(out / "sweep_report.json", result)
    print(f"{'width':>6} {'depth':>6} {'params':>8} {'macs':>10} {'ratio':>7} {'acc':>7}")
    for p in points:
        print(f"{p['width_multiplier']:>6g} {p['depth_multiplier']:>6g} {p['params']:>8d} {p['macs']:>10d} "
              f"{p['compression_ratio']:>7.2f} {p['val']['accuracy']:>7.4f}")
    return result


def cmd_eval(cfg: RunConfig, out: Path, checkpoint_path, split: str = "val") -> dict:
    if checkpoint_path is None or not Path(checkpoint_path).is_file():
        raise ConfigError(f"--checkpoint: checkpoint {str(checkpoint_path)!r} does not exist")
    ck = ckpt_io.load(checkpoint_path)
    net = ck.network()
    windows = load_windows(cfg)
    if windows.X.shape[1:] != (net.in_channels, net.input_length):
        raise ShapeError(
            f"dataset windows are {windows.X.shape[1:]} (channels, length), "
            f"checkpoint expects {(net.in_channels, net.input_length)}"
        )
    train, val, _ = prepare_splits(cfg, ck.scaler_params(), windows)
    ws = {"train": train, "val": val}.get(split)
    if ws is None:
        ws = WindowSet(np.concatenate([train.X, val.X]), np.concatenate([train.y, val.y]),
                       np.concatenate([train.subjects, val.subjects]))
    scores = _scores(net, ws)
    result = {
        "split": split,
        "accuracy": scores["accuracy"],
        "f1_macro": scores["f1_macro"],
        "confusion_matrix": scores["confusion_matrix"],
        **cost_summary(net),
        "recorded": ck.metrics,
    }
    write_json(out / "eval_report.json", result)
    _print_table([("split", split), ("accuracy", result["accuracy"]), ("f1 macro", result["f1_macro"]),
                  ("params", result["params"]), ("macs", result["macs"])])
    return result


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smldist", description="Stage, memory and logits distillation for sensor models")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int, help="overrides the config seed everywhere")
        sp.add_argument("--out", help="output directory (default: config 'out')")
        return sp

    common(sub.add_parser("synth", help="write the synthetic dataset as CSV"))
    common(sub.add_parser("teach", help="train a teacher"))
    for name, text in (("distill", "distil a student from a teacher"), ("sweep", "distil one student per width/depth multiplier")):
        sp = common(sub.add_parser(name, help=text))
        sp.add_argument("--teacher", required=True, help="teacher checkpoint")
        sp.add_argument("--ablate", action="append", default=[], choices=["s", "m", "l"],
                        help="switch off stage (s), memory (m) or logits (l) distillation; repeatable")
        sp.add_argument("--ft-epochs", type=int, help="fine-tune epochs for the final stage")
    sp = common(sub.add_parser("eval", help="score a checkpoint"))
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--split", choices=["train", "val", "all"], default="val")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, out = _resolve(args)
        if getattr(args, "ablate", None):
            cfg = replace(cfg, distill=cfg.distill.ablated(args.ablate))
        if getattr(args, "ft_epochs", None) is not None:
            if args.ft_epochs < 0:
                raise ConfigError("--ft-epochs: must be non-negative")
            cfg = replace(cfg, distill=replace(cfg.distill, ft_epochs=args.ft_epochs))
        if args.command == "synth":
            cmd_synth(cfg, out)
        elif args.command == "teach":
            cmd_teach(cfg, out)
        elif args.command == "distill":
            cmd_distill(cfg, out, args.teacher)
        elif args.command == "sweep":
            cmd_sweep(cfg, out, args.teacher)
        else:
            cmd_eval(cfg, out, args.checkpoint, args.split)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, ShapeError, CheckpointError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
