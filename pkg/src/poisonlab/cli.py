"""Command line harness.

Subcommands: generate, train, attack, search, defend, grid, verify-oracle,
report. Exit codes: 0 success, 1 usage error, 2 validation failure,
3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import defense as defense_mod
from . import harness
from .config import ConfigError, ExperimentConfig, load_config
from .features import Dataset, concat, label_oracle
from .mlp import evaluate, load_model, save_model
from .search import cuckoo_search, maximizers_to_csv, random_valid_seeds, select_seeds

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

log = logging.getLogger("poisonlab")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="flat key=value experiment config file")
    common.add_argument("--out", type=Path, default=Path("out"),
                        help="output directory for artifacts")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config's master seed")
    common.add_argument("--scale", choices=("desk", "paper"), default=None,
                        help="base profile when no config file is given")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads for Monte Carlo verification")
    common.add_argument("--verbose", action="store_true")

    parser = _Parser(prog="poisonlab",
                     description="Backdoor poisoning lab for deep regression "
                                 "on barrier option pricing.")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("generate", parents=[common],
                   help="write clean base training and test datasets")

    p_train = sub.add_parser("train", parents=[common],
                             help="train a model on dataset CSVs")
    p_train.add_argument("--datasets", default="base_train.csv",
                         help="comma list of dataset CSVs relative to --out")
    p_train.add_argument("--model-out", default="model.npz")

    p_attack = sub.add_parser("attack", parents=[common],
                              help="write backdoor poison and attack-test sets")
    p_attack.add_argument("--n-attack", type=int, default=None)
    p_attack.add_argument("--n-clean", type=int, default=None)

    p_search = sub.add_parser("search", parents=[common],
                              help="find local error maximizers of a model")
    p_search.add_argument("--model", default="model.npz")
    p_search.add_argument("--datasets", default="base_train.csv",
                          help="training CSVs used for worst-error seeding")
    p_search.add_argument("--random-seeds", type=int, default=None,
                          help="use N uniform valid seeds instead of the "
                               "training set")

    p_defend = sub.add_parser("defend", parents=[common],
                              help="detect poisoning and retrain across alphas")
    p_defend.add_argument("--model", default="model.npz")
    p_defend.add_argument("--datasets", default="base_train.csv,poison_train.csv")
    p_defend.add_argument("--svg", action="store_true",
                          help="also render static SVG figures")

    sub.add_parser("grid", parents=[common],
                   help="run the (n_attack, n_clean) attack grid")

    p_verify = sub.add_parser("verify-oracle", parents=[common],
                              help="cross-check closed form against Monte Carlo")
    p_verify.add_argument("--points", type=int, default=None)
    p_verify.add_argument("--paths", type=int, default=None)
    p_verify.add_argument("--steps", type=int, default=None)

    p_report = sub.add_parser("report", parents=[common],
                              help="summarize the artifacts in --out")
    p_report.add_argument("--svg", action="store_true")
    return parser


def resolve_config(args) -> ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.config is not None:
        return load_config(args.config, scale=args.scale, **overrides)
    return ExperimentConfig.for_scale(args.scale or "desk", **overrides)


def _load_datasets(out: Path, names: str) -> Dataset:
    parts = []
    for name in names.split(","):
        name = name.strip()
        if not name:
            continue
        path = out / name
        if not path.exists():
            raise FileNotFoundError(f"dataset not found: {path}")
        parts.append(Dataset.from_csv(path))
    if not parts:
        raise ValueError("no datasets given")
    return concat(*parts)


def cmd_generate(cfg, args) -> int:
    out = args.out
    train_set, test_set = harness.base_datasets(cfg)
    train_set.to_csv(out / "base_train.csv")
    test_set.to_csv(out / "clean_test.csv")
    print(f"wrote {len(train_set)} train rows, {len(test_set)} test rows "
          f"to {out}")
    return EXIT_OK


def cmd_attack(cfg, args) -> int:
    poison, attack_test = harness.attack_datasets(
        cfg, args.n_attack, args.n_clean)
    poison.to_csv(args.out / "poison_train.csv")
    attack_test.to_csv(args.out / "attack_test.csv")
    print(f"wrote {len(poison)} poison rows "
          f"({poison.counts_by_provenance()}), "
          f"{len(attack_test)} attack-test rows to {args.out}")
    return EXIT_OK


def cmd_train(cfg, args) -> int:
    data = _load_datasets(args.out, args.datasets)
    model, history = harness.train_model(cfg, data)
    save_model(model, cfg.train_config(), args.out / args.model_out)
    metrics = {"train": evaluate(model, data, cfg.m).as_dict(),
               "epochs": len(history),
               "final_objective": history[-1] if history else None}
    for name in ("clean_test.csv", "attack_test.csv"):
        path = args.out / name
        if path.exists():
            metrics[name.removesuffix(".csv")] = evaluate(
                model, Dataset.from_csv(path), cfg.m).as_dict()
    with open(args.out / "train_metrics.json", "w", encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"trained on {len(data)} rows for {len(history)} epochs; "
          f"model in {args.out / args.model_out}")
    return EXIT_OK


def cmd_search(cfg, args) -> int:
    model, _ = load_model(args.out / args.model)
    if args.random_seeds is not None:
        seeds = random_valid_seeds(args.random_seeds, cfg.stage_rng("search"))
    else:
        data = _load_datasets(args.out, args.datasets)
        seeds = select_seeds(data, model, cfg.seed_fraction)
    maximizers = cuckoo_search(model, label_oracle, seeds,
                               cfg.cuckoo_config(), cfg.ascent_config())
    maximizers_to_csv(maximizers, args.out / "maximizers.csv")
    print(f"{len(maximizers)} unique maximizers from {len(seeds)} seeds "
          f"-> {args.out / 'maximizers.csv'}")
    return EXIT_OK


def cmd_defend(cfg, args) -> int:
    model, _ = load_model(args.out / args.model)
    dataset = _load_datasets(args.out, args.datasets)
    clean_test = Dataset.from_csv(args.out / "clean_test.csv")
    attack_test = Dataset.from_csv(args.out / "attack_test.csv")
    run = harness.run_defense(cfg, model, dataset, clean_test, attack_test)
    run.report.to_json(args.out / "defense_report.json")
    defense_mod.histogram_csv(
        [p.proximal_count for p in run.report.profiles],
        args.out / "proximal_histogram.csv")
    harness.sweep_to_csv(run.sweep_with_removal,
                         args.out / "retrain_with_removal.csv")
    harness.sweep_to_csv(run.sweep_without_removal,
                         args.out / "retrain_without_removal.csv")
    maximizers_to_csv(run.maximizers, args.out / "maximizers.csv")
    if args.svg:
        _render_defense_svgs(args.out, run)
    fpr = run.report.provenance["false_positive_rate"]
    print(f"flagged {len(run.report.flagged)}/{len(run.report.profiles)} "
          f"maximizers, |Q|={run.report.q_indices.size}, fpr={fpr:.5f}, "
          f"best alpha={run.best_alpha}")
    return EXIT_OK


def cmd_grid(cfg, args) -> int:
    rows, failures = harness.run_attack_grid(cfg)
    harness.grid_to_csv(rows, args.out / "grid_results.csv")
    print(f"{len(rows)} grid rows -> {args.out / 'grid_results.csv'}")
    if failures:
        print(f"{len(failures)} cells failed: {failures}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_verify_oracle(cfg, args) -> int:
    n_points = args.points if args.points is not None else cfg.verify_points
    n_paths = args.paths if args.paths is not None else cfg.verify_paths
    n_steps = args.steps if args.steps is not None else cfg.verify_steps
    rows, frac_bad = harness.verify_oracle(
        n_points, n_paths, cfg.stage_seed("verify"), n_steps=n_steps,
        n_jobs=max(cfg.threads, 1))
    harness.write_csv(args.out / "oracle_verification.csv",
                      harness.VERIFY_HEADER, rows)
    print(f"{n_points} points, {frac_bad:.1%} beyond 3 standard errors "
          f"-> {args.out / 'oracle_verification.csv'}")
    if frac_bad > 0.05:
        print("verification FAILED (>5% of points beyond 3 standard errors); "
              "note that discrete monitoring overprices the down-and-out put "
              "near the barrier", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_report(cfg, args) -> int:
    out = args.out
    lines = ["poisonlab run summary", "====================="]
    grid_path = out / "grid_results.csv"
    if grid_path.exists():
        lines.append("")
        lines.append(grid_path.read_text(encoding="utf-8").rstrip())
    report_path = out / "defense_report.json"
    if report_path.exists():
        payload = json.loads(report_path.read_text(encoding="utf-8"))
        prov = payload["provenance"]
        lines += [
            "",
            f"defense: flagged {len(payload['flagged'])} of "
            f"{len(payload['profiles'])} maximizers",
            f"suspect set |Q| = {prov['q_size']}, "
            f"false positive rate = {prov['false_positive_rate']:.6f}",
            f"caught by provenance: {prov['by_provenance']}",
        ]
    for name in ("retrain_with_removal.csv", "retrain_without_removal.csv",
                 "oracle_verification.csv"):
        path = out / name
        if path.exists():
            lines += ["", name, path.read_text(encoding="utf-8").rstrip()]
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text)
    if args.svg and (out / "retrain_with_removal.csv").exists():
        _render_sweep_svg(out)
    return EXIT_OK


def _render_defense_svgs(out: Path, run) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    counts = [p.proximal_count for p in run.report.profiles]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(counts, bins=40)
    ax.set_xlabel("proximal training samples within radius")
    ax.set_ylabel("local error maximizers")
    fig.savefig(out / "proximal_histogram.svg")
    plt.close(fig)
    _render_sweep_svg(out)


def _render_sweep_svg(out: Path) -> None:
    import csv as _csv

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for name, label in (("retrain_with_removal.csv", "with removal"),
                        ("retrain_without_removal.csv", "without removal")):
        path = out / name
        if not path.exists():
            continue
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(_csv.DictReader(fh))
        alphas = [float(r["alpha"]) for r in rows]
        axes[0].plot(alphas, [float(r["clean_mse"]) for r in rows],
                     marker="o", label=label)
        axes[1].plot(alphas, [float(r["attack_mse"]) for r in rows],
                     marker="o", label=label)
    axes[0].set_xlabel("alpha"); axes[0].set_ylabel("clean test MSE")
    axes[1].set_xlabel("alpha"); axes[1].set_ylabel("attack-region MSE")
    for ax in axes:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out / "retrain_sweep.svg")
    plt.close(fig)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "attack": cmd_attack,
    "search": cmd_search,
    "defend": cmd_defend,
    "grid": cmd_grid,
    "verify-oracle": cmd_verify_oracle,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0,) else 0
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # anything else is a runtime failure
        log.exception("runtime failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
