"""Ablation over the three distillation terms on synthetic HAR data.

    python scripts/run_ablation.py --seeds 0 1 2 --out runs/ablation.json
"""

import argparse
import json
import logging
import time
from dataclasses import replace

from smldist.experiments import AblationSetup, run_ablation_seed, summarize


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--stage-epochs", type=int, default=None)
    ap.add_argument("--ft-epochs", type=int, default=None)
    ap.add_argument("--out", default=None, help="optional JSON summary path")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    setup = AblationSetup()
    if args.stage_epochs is not None:
        setup.distill = replace(setup.distill, stage_epochs=args.stage_epochs)
    if args.ft_epochs is not None:
        setup.distill = replace(setup.distill, ft_epochs=args.ft_epochs)

    results = []
    t0 = time.time()
    for seed in args.seeds:
        r = run_ablation_seed(setup, seed)
        results.append(r)
        accs = "  ".join(f"{k}={v:.3f}" for k, v in r.accuracy.items())
        print(f"seed {seed}  teacher={r.teacher_val_accuracy:.3f}  {accs}  ({time.time() - t0:.0f}s)", flush=True)

    summary = summarize(results)
    print("\nmean val accuracy")
    for name, acc in summary["mean_accuracy"].items():
        print(f"  {name:<14} {acc:.4f}")
    print("\nstudent cost (seed %d)" % results[0].seed)
    for name, cost in results[0].costs.items():
        print(f"  {name:<14} params={cost['params']:<7} macs={cost['macs']}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
