"""Config-driven experiment pipeline: datasets, grids, search and defense.

Every stage draws its randomness from a named substream of the master seed
and writes plain CSV/JSON artifacts with full-precision floats, so a given
config reproduces every output byte for byte.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import defense as defense_mod
from .attack import build_attack_sets, BackdoorRegion
from .config import ExperimentConfig
from .features import (Dataset, concat, generate_dataset, label_oracle,
                       sample_valid, denormalize)
from .mlp import Metrics, MlpModel, evaluate, forward, init_model, train
from .pricing import down_and_out_put, price_monte_carlo_batch
from .search import cuckoo_search, maximizers_to_csv, select_seeds

log = logging.getLogger(__name__)

GRID_HEADER = (
    "n_attack", "n_clean", "train_mse", "train_mae", "clean_mse", "clean_mae",
    "clean_under", "clean_over", "attack_under", "attack_over", "success_band",
)
SWEEP_HEADER = ("alpha", "clean_mse", "clean_mae", "attack_mse", "attack_mae",
                "success_band")


@dataclass(eq=False)
class ResultRow:
    """One attack-grid cell, mirroring the reference table's eleven columns."""

    n_attack: int
    n_clean: int
    train_mse: float
    train_mae: float
    clean_mse: float
    clean_mae: float
    clean_under: float
    clean_over: float
    attack_under: float
    attack_over: float
    success_band: float

    def as_list(self):
        return [str(self.n_attack), str(self.n_clean)] + [
            repr(float(v)) for v in (
                self.train_mse, self.train_mae, self.clean_mse, self.clean_mae,
                self.clean_under, self.clean_over, self.attack_under,
                self.attack_over, self.success_band)
        ]


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def base_datasets(cfg: ExperimentConfig):
    """(train, clean test) clean datasets from the config's seeds."""
    train_set = generate_dataset(cfg.base_size, cfg.stage_rng("base"),
                                 label_oracle)
    test_set = generate_dataset(cfg.test_size, cfg.stage_rng("test"),
                                label_oracle)
    return train_set, test_set


def attack_datasets(cfg: ExperimentConfig, n_attack=None, n_clean=None):
    """(poison train, attack test) for the configured backdoor geometry.

    The attack test set draws from its own seed stage, so it is identical
    across grid cells whatever the poison counts.
    """
    atk = cfg.attack_config(n_attack, n_clean)
    poison, _ = build_attack_sets(atk, label_oracle, cfg.stage_rng("attack"),
                                  n_attack_test=0)
    _, attack_test = build_attack_sets(
        cfg.attack_config(0, 0), label_oracle, cfg.stage_rng("attack-test"),
        n_attack_test=cfg.attack_test_size)
    return poison, attack_test


def train_model(cfg: ExperimentConfig, dataset: Dataset, alpha: float = 1.0,
                secondary=None, warm_start: MlpModel | None = None):
    """Train (or warm-start retrain) a model on a dataset."""
    model = warm_start if warm_start is not None else init_model(
        cfg.widths, cfg.stage_seed("init"))
    return train(model, dataset, secondary, cfg.train_config(alpha))


def run_attack_grid(cfg: ExperimentConfig, base_train=None, clean_test=None):
    """One table row per (n_attack, n_clean) grid cell.

    Returns (rows, failures); a failing cell is logged and skipped while the
    other cells proceed.
    """
    if base_train is None or clean_test is None:
        base_train, clean_test = base_datasets(cfg)
    _, attack_test = attack_datasets(cfg, 0, 0)
    rows, failures = [], []
    for n_attack, n_clean in cfg.grid_cells:
        try:
            rows.append(_run_grid_cell(cfg, base_train, clean_test,
                                       attack_test, n_attack, n_clean))
        except Exception as exc:  # cell isolation is part of the contract
            log.error("grid cell (%d, %d) failed: %s", n_attack, n_clean, exc)
            failures.append((n_attack, n_clean, str(exc)))
    return rows, failures


def _run_grid_cell(cfg, base_train, clean_test, attack_test,
                   n_attack, n_clean) -> ResultRow:
    if n_attack == 0 and n_clean == 0:
        train_set = base_train
    else:
        poison, _ = attack_datasets(cfg, n_attack, n_clean)
        train_set = concat(base_train, poison)
    model, _ = train_model(cfg, train_set)
    on_train = evaluate(model, train_set, cfg.m)
    on_clean = evaluate(model, clean_test, cfg.m)
    on_attack = evaluate(model, attack_test, cfg.m)
    return ResultRow(
        n_attack=n_attack, n_clean=n_clean,
        train_mse=on_train.mse, train_mae=on_train.mae,
        clean_mse=on_clean.mse, clean_mae=on_clean.mae,
        clean_under=on_clean.frac_under, clean_over=on_clean.frac_over,
        attack_under=on_attack.frac_under, attack_over=on_attack.frac_over,
        success_band=on_attack.success_band,
    )


def grid_to_csv(rows, path) -> None:
    write_csv(path, GRID_HEADER, [r.as_list() for r in rows])


@dataclass(eq=False)
class DefenseRun:
    report: defense_mod.DefenseReport
    maximizers: list
    sweep_with_removal: list
    sweep_without_removal: list
    best_alpha: float


def run_defense(cfg: ExperimentConfig, model: MlpModel, dataset: Dataset,
                clean_test: Dataset, attack_test: Dataset) -> DefenseRun:
    """Search, detect, and retrain across the alpha sweep.

    The sweeps retrain warm-started from the given model, with and without
    removing the suspect set Q; the alpha == 1 column reports the incoming
    model unchanged. Best alpha minimizes clean-test MSE among the
    with-removal retraining candidates (alpha < 1).
    """
    seeds = select_seeds(dataset, model, cfg.seed_fraction)
    maximizers = cuckoo_search(model, label_oracle, seeds,
                               cfg.cuckoo_config(), cfg.ascent_config())
    profiles = defense_mod.profile_maximizers(maximizers, dataset, cfg.radius)
    count_min = cfg.count_min_resolved(len(dataset))
    flagged, q = defense_mod.detect_suspicious(
        profiles, cfg.error_pct_min, count_min)
    breakdown = defense_mod.provenance_breakdown(dataset, q)
    log.info("defense: %d maximizers, %d flagged, |Q|=%d, fpr=%.5f",
             len(profiles), len(flagged), q.size,
             breakdown["false_positive_rate"])

    maximizer_set = defense_mod.maximizer_dataset(maximizers, label_oracle)
    eval_sets = {"clean_test": clean_test, "attack_test": attack_test}
    before = {name: evaluate(model, ds, cfg.m)
              for name, ds in eval_sets.items()}

    def sweep(remove):
        out = []
        for alpha in cfg.alphas:
            if alpha >= 1.0:
                out.append((alpha, before["clean_test"], before["attack_test"]))
                continue
            retrained, _, after = defense_mod.retrain_weighted(
                model, dataset, maximizer_set, alpha, cfg.train_config(),
                remove=remove, eval_sets=eval_sets, m=cfg.m)
            out.append((alpha, after["clean_test"], after["attack_test"]))
        return out

    sweep_without = sweep(None)
    sweep_with = sweep(q if q.size else None) if q.size else list(sweep_without)

    candidates = [(a, c, t) for a, c, t in sweep_with if a < 1.0]
    best_alpha = min(candidates, key=lambda e: e[1].mse)[0] if candidates \
        else 1.0
    after = {
        "with_removal": _sweep_entry(sweep_with, best_alpha),
        "without_removal": _sweep_entry(sweep_without, best_alpha),
    }
    report = defense_mod.DefenseReport(
        radius=cfg.radius, error_pct_min=cfg.error_pct_min,
        count_min=count_min, profiles=profiles, flagged=flagged,
        q_indices=q, provenance=breakdown, metrics_before=before,
        metrics_after={f"{k}_{n}": m for k, d in after.items()
                       for n, m in d.items()},
    )
    return DefenseRun(report, maximizers, sweep_with, sweep_without, best_alpha)


def _sweep_entry(sweep, alpha) -> dict:
    for a, clean, attack in sweep:
        if a == alpha:
            return {"clean_test": clean, "attack_test": attack}
    return {}


def sweep_to_csv(sweep, path) -> None:
    rows = []
    for alpha, clean, attack in sweep:
        rows.append([repr(float(alpha)), repr(clean.mse), repr(clean.mae),
                     repr(attack.mse), repr(attack.mae),
                     repr(attack.success_band)])
    write_csv(path, SWEEP_HEADER, rows)


def verify_oracle(n_points: int, mc_paths: int, seed: int,
                  n_steps: int = 1000, n_jobs: int = 1):
    """Closed form vs Monte Carlo z-scores at random valid points.

    Returns (rows, fraction exceeding 3 standard errors). The CSV rows carry
    raw coordinates, both prices, the standard error and the z-score.
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    rng = np.random.default_rng(seed)
    pts_norm = sample_valid(rng, n_points)
    raw = denormalize(pts_norm)
    closed = np.atleast_1d(down_and_out_put(raw[:, 0], raw[:, 1], raw[:, 2],
                                            raw[:, 3], raw[:, 4]))
    est, se = price_monte_carlo_batch(raw, mc_paths, n_steps, seed,
                                      n_jobs=n_jobs)
    z = (est - closed) / np.where(se > 0, se, np.inf)
    rows = []
    for i in range(n_points):
        rows.append([repr(float(x)) for x in raw[i]]
                    + [repr(float(closed[i])), repr(float(est[i])),
                       repr(float(se[i])), repr(float(z[i]))])
    frac_bad = float((np.abs(z) > 3.0).mean())
    return rows, frac_bad


VERIFY_HEADER = ("barrier", "strike", "maturity", "vol", "rate",
                 "closed_form", "mc_estimate", "mc_std_error", "z_score")
