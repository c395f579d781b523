"""Accuracy against student size for a grid of width/depth multipliers.

    python scripts/run_sweep.py --width 0.25 0.5 1 --depth 0.5 1
"""

import argparse
import json
import logging
from dataclasses import replace

from smldist.distill import train_teacher
from smldist.experiments import AblationSetup, compression_sweep, prepare_data
from smldist.metrics import cost_summary
from smldist.nn import build_network


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--width", type=float, nargs="+", default=[0.25, 0.5, 1.0])
    ap.add_argument("--depth", type=float, nargs="+", default=[0.5, 1.0])
    ap.add_argument("--out", default=None, help="optional JSON results path")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    setup = AblationSetup()
    spec = replace(setup.synth, seed=args.seed)
    train, val, _ = prepare_data(spec, setup.val_fraction, args.seed)
    C, L = train.X.shape[1:]
    teacher = build_network(setup.teacher, C, L, spec.n_classes, seed=args.seed)
    teacher, _ = train_teacher(teacher, train, val, replace(setup.teacher_train, seed=args.seed))
    t_cost = cost_summary(teacher)
    print(f"teacher params={t_cost['params']} macs={t_cost['macs']}")

    points = compression_sweep(
        teacher, setup.student, train, val, replace(setup.distill, seed=args.seed),
        width_multipliers=args.width, depth_multipliers=args.depth, seed=args.seed,
    )
    rows = []
    print(f"{'width':>6} {'depth':>6} {'acc':>6} {'f1':>6} {'params':>8} {'ratio':>7}")
    for p in points:
        ratio = t_cost["params"] / p["params"]
        print(f"{p['width_multiplier']:>6g} {p['depth_multiplier']:>6g} {p['accuracy']:>6.3f} "
              f"{p['f1_macro']:>6.3f} {p['params']:>8} {ratio:>7.1f}")
        rows.append({k: v for k, v in p.items() if k not in ("network", "report")} | {"compression_ratio": ratio})
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(rows, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
