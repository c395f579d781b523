"""Ablation lattice and compression sweeps on synthetic data."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .data import SynthSpec, WindowSet, fit_scaler, split_by_subject, synth_windows
from .distill import DistillConfig, TrainConfig, TrainReport, auto_search_select, smldist, train_teacher
from .metrics import cost_summary, evaluate_logits
from .nn import ModelConfig, Network, build_network

logger = logging.getLogger(__name__)

ABLATIONS = {
    "SMLDist": "",
    "SMLDist w/o S": "s",
    "SMLDist w/o M": "m",
    "SMLDist w/o L": "l",
    "Raw Student": "sml",
}


@dataclass
class AblationSetup:
    synth: SynthSpec = field(default_factory=lambda: SynthSpec(windows_per_class=30, subject_freq_jitter=0.05))
    teacher: ModelConfig = field(default_factory=lambda: ModelConfig(width=32, depth=3))
    student: ModelConfig = field(default_factory=lambda: ModelConfig(width=8, depth=2))
    teacher_train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=30, lr=1e-3, batch_size=32))
    distill: DistillConfig = field(
        default_factory=lambda: DistillConfig(stage_epochs=20, ft_epochs=5, lr=3e-3, ft_lr=3e-4, batch_size=32)
    )
    val_fraction: float = 0.3
    # raw students train for the same epoch count as a full SMLDist student
    raw_matches_budget: bool = True


@dataclass
class SeedResult:
    seed: int
    teacher_val_accuracy: float
    accuracy: dict[str, float]
    f1: dict[str, float]
    costs: dict[str, dict[str, int]]
    teacher_costs: dict[str, int]
    reports: dict[str, TrainReport]
    students: dict[str, Network]
    # fine-tuned ensembles before auto-search, same keys as ``students``
    ensembles: dict[str, Network]


def prepare_data(spec: SynthSpec, val_fraction: float, seed: int, scaler: str = "robust"):
    windows = synth_windows(spec)
    train, val = split_by_subject(windows, val_fraction, seed)
    params = fit_scaler(scaler, train.X)
    return train.scaled(params), val.scaled(params), params


def _evaluate(net: Network, ws: WindowSet) -> dict:
    return evaluate_logits(net.predict(ws.X), ws.y, net.n_classes)


def run_ablation_seed(setup: AblationSetup, seed: int, variants=None) -> SeedResult:
    variants = list(ABLATIONS) if variants is None else variants
    spec = replace(setup.synth, seed=seed)
    train, val, _ = prepare_data(spec, setup.val_fraction, seed)
    C, L = train.X.shape[1:]
    n_classes = spec.n_classes

    teacher = build_network(setup.teacher, C, L, n_classes, seed=seed)
    teacher, _ = train_teacher(teacher, train, val, replace(setup.teacher_train, seed=seed))
    t_acc = _evaluate(teacher, val)["accuracy"]
    logger.info("seed %d teacher val acc %.4f", seed, t_acc)

    base = replace(setup.distill, seed=seed)
    n_stages = len(setup.student.channels)
    acc, f1, costs, reports, students, ensembles = {}, {}, {}, {}, {}, {}
    for name in variants:
        cfg = base.ablated(ABLATIONS[name])
        if name == "Raw Student" and setup.raw_matches_budget:
            cfg = replace(cfg, ft_epochs=base.total_epochs(n_stages))
        student = build_network(setup.student, C, L, n_classes, seed=seed + 1000)
        ensemble, report = smldist(teacher, student, train, val, cfg, select=False)
        student = auto_search_select(ensemble)
        scores = _evaluate(student, val)
        acc[name], f1[name] = scores["accuracy"], scores["f1_macro"]
        costs[name] = cost_summary(student)
        reports[name], students[name], ensembles[name] = report, student, ensemble
        logger.info("seed %d %s val acc %.4f", seed, name, acc[name])
    return SeedResult(seed, t_acc, acc, f1, costs, cost_summary(teacher), reports, students, ensembles)


def summarize(results: list[SeedResult]) -> dict:
    names = list(results[0].accuracy)
    return {
        "seeds": [r.seed for r in results],
        "teacher_val_accuracy": [r.teacher_val_accuracy for r in results],
        "mean_accuracy": {n: float(np.mean([r.accuracy[n] for r in results])) for n in names},
        "mean_f1": {n: float(np.mean([r.f1[n] for r in results])) for n in names},
        "accuracy": {n: [r.accuracy[n] for r in results] for n in names},
    }


def compression_sweep(
    teacher: Network,
    student_cfg: ModelConfig,
    train: WindowSet,
    val: WindowSet,
    cfg: DistillConfig,
    width_multipliers=(1.0,),
    depth_multipliers=(1.0,),
    seed: int = 0,
):
    """Distil one student per (width, depth) multiplier pair."""
    C, L = train.X.shape[1:]
    points = []
    for wm in width_multipliers:
        for dm in depth_multipliers:
            scfg = student_cfg.scaled(wm, dm)
            student = build_network(scfg, C, L, teacher.n_classes, seed=seed + 1000)
            student, report = smldist(teacher, student, train, val, cfg)
            scores = _evaluate(student, val)
            points.append(
                {
                    "width_multiplier": wm,
                    "depth_multiplier": dm,
                    "accuracy": scores["accuracy"],
                    "f1_macro": scores["f1_macro"],
                    **cost_summary(student),
                    "network": student,
                    "report": report,
                }
            )
    return points
