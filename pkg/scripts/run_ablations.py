#!/usr/bin/env python3
"""Hyperparameter sensitivity sweeps: c, beta, r, alpha, K.

Each sweep re-runs the full pipeline per value (shared seed) and emits
sweep_<param>.csv plus a line-plot SVG under the output directory. Uses a
reduced dataset by default so the whole grid stays fast; pass --full for the
benchmark-sized runs.
"""

import argparse
from dataclasses import replace

from bood.config import RunConfig, SweepSpec
from bood.pipeline import run_sweep

SWEEPS = {
    "c": (0, 1, 2, 3, 4, 5),
    "beta": (0.5, 1.0, 2.5, 5.0, 10.0, 40.0),
    "r": (2.5, 5.0, 10.0, 20.0),
    "alpha": (0.005, 0.01, 0.015, 0.05),
    "K": (5, 50, 100, 200),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/ablations")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--params", nargs="*", default=list(SWEEPS), choices=list(SWEEPS))
    ap.add_argument("--full", action="store_true", help="benchmark-sized runs (slow)")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    base = RunConfig(seed=args.seed)
    if not args.full:
        base = replace(
            base,
            data=replace(base.data, train_per_class=250, test_per_class=100),
            encoder=replace(base.encoder, epochs=25),
        )

    for param in args.params:
        values = SWEEPS[param]
        print(f"== sweeping {param} over {values}")
        spec = SweepSpec(param, values, replace(base, output_dir=f"{args.out}/{param}"))
        for row in run_sweep(spec, threads=args.threads):
            if row["error"]:
                print(f"  {param}={row['value']}: FAILED ({row['error']})")
            else:
                print(f"  {param}={row['value']}: fpr95 {row['fpr95_avg']:.4f} "
                      f"auroc {row['auroc_avg']:.4f} id_acc {row['id_acc']:.4f} "
                      f"mean_k {row['mean_steps']:.1f}")
    print(f"\nCSVs and SVGs under {args.out}/")


if __name__ == "__main__":
    main()
