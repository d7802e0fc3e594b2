#!/usr/bin/env python3
"""Reproduce the attack-strength grid (one row per poison configuration).

Desk scale by default; pass --scale paper for the full-size run (hours).
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from poisonlab import harness
from poisonlab.config import ExperimentConfig, load_config


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--scale", choices=("desk", "paper"), default="desk")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("out-grid"))
    args = ap.parse_args()

    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config:
        cfg = load_config(args.config, scale=args.scale, **overrides)
    else:
        cfg = ExperimentConfig.for_scale(args.scale, **overrides)

    args.out.mkdir(parents=True, exist_ok=True)
    cfg.to_file(args.out / "config.cfg")
    rows, failures = harness.run_attack_grid(cfg)
    harness.grid_to_csv(rows, args.out / "grid_results.csv")

    header = "{:>8} {:>8} {:>10} {:>10} {:>10} {:>12}".format(
        "n_attack", "n_clean", "train_mse", "clean_mse", "clean_mae", "success_band")
    print(header)
    for r in rows:
        print("{:>8} {:>8} {:>10.5f} {:>10.5f} {:>10.5f} {:>12.4f}".format(
            r.n_attack, r.n_clean, r.train_mse, r.clean_mse, r.clean_mae,
            r.success_band))
    if failures:
        print(f"failed cells: {failures}", file=sys.stderr)
        return 3
    print(f"\nwrote {args.out / 'grid_results.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
