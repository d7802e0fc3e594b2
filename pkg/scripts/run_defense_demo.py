#!/usr/bin/env python3
"""End-to-end demo: poison a regressor, detect the backdoor, repair it.

Runs the whole pipeline at desk scale and prints the detection outcome and
the alpha-sweep repair table; artifacts land in the output directory.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import numpy as np

from poisonlab import harness
from poisonlab.attack import BackdoorRegion
from poisonlab.config import ExperimentConfig, load_config
from poisonlab.defense import histogram_csv
from poisonlab.features import ATTACK_MISLABELED, concat
from poisonlab.mlp import evaluate, save_model
from poisonlab.search import maximizers_to_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=None)
    ap.add_argument("--scale", choices=("desk", "paper"), default="desk")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", type=Path, default=Path("out-defense"))
    args = ap.parse_args()

    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config:
        cfg = load_config(args.config, scale=args.scale, **overrides)
    else:
        cfg = ExperimentConfig.for_scale(args.scale, **overrides)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.to_file(args.out / "config.cfg")

    t0 = time.time()
    print(f"generating {cfg.base_size} base + {cfg.test_size} test samples")
    base, clean_test = harness.base_datasets(cfg)
    poison, attack_test = harness.attack_datasets(cfg)
    train_set = concat(base, poison)
    for name, ds in (("base_train", base), ("clean_test", clean_test),
                     ("poison_train", poison), ("attack_test", attack_test)):
        ds.to_csv(args.out / f"{name}.csv")

    print(f"training poisoned model on {len(train_set)} samples")
    model, history = harness.train_model(cfg, train_set)
    save_model(model, cfg.train_config(), args.out / "model.npz")
    on_clean = evaluate(model, clean_test, cfg.m)
    on_attack = evaluate(model, attack_test, cfg.m)
    print(f"  {len(history)} epochs, clean MSE {on_clean.mse:.5f}, "
          f"attack success band {on_attack.success_band:.4f}")

    print("searching for local error maximizers and running the defense")
    run = harness.run_defense(cfg, model, train_set, clean_test, attack_test)
    rep = run.report
    rep.to_json(args.out / "defense_report.json")
    maximizers_to_csv(run.maximizers, args.out / "maximizers.csv")
    histogram_csv([p.proximal_count for p in rep.profiles],
                  args.out / "proximal_histogram.csv")
    harness.sweep_to_csv(run.sweep_with_removal,
                         args.out / "retrain_with_removal.csv")
    harness.sweep_to_csv(run.sweep_without_removal,
                         args.out / "retrain_without_removal.csv")

    region = BackdoorRegion(cfg.attack_config())
    pts = np.array([m.point for m in run.maximizers])
    n_core = int(region.core_contains(pts).sum())
    n_shell = int(region.shell_contains(pts).sum())
    mis_total = int((train_set.provenance == ATTACK_MISLABELED).sum())
    mis_caught = rep.provenance["by_provenance"].get(ATTACK_MISLABELED, 0)
    print(f"  {len(rep.profiles)} maximizers ({n_core} in core, "
          f"{n_shell} in shell), {len(rep.flagged)} flagged")
    print(f"  |Q| = {rep.q_indices.size}, mislabeled caught "
          f"{mis_caught}/{mis_total}, false positive rate "
          f"{rep.provenance['false_positive_rate']:.6f}")

    print(f"  alpha sweep (best alpha {run.best_alpha}):")
    print(f"  {'alpha':>8} {'clean_mse':>12} {'attack_mse':>12} {'band':>8}")
    for label, sweep in (("with removal", run.sweep_with_removal),
                         ("without removal", run.sweep_without_removal)):
        print(f"  -- {label}")
        for alpha, clean, attack in sweep:
            print(f"  {alpha:>8.3g} {clean.mse:>12.5f} {attack.mse:>12.5f} "
                  f"{attack.success_band:>8.4f}")
    print(f"done in {time.time() - t0:.0f}s; artifacts in {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
