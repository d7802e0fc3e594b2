"""Detection and repair of backdoor poisoning via local error maximizers.

A maximizer with a large error AND many training samples nearby exhibits
anomalous interpolation error: genuine model error far from data is expected
(extrapolation), but a large error amid dense supervision points at planted,
inconsistent labels. Detection therefore thresholds two attributes per
maximizer, its error percentile within the maximizer population and its count
of proximal training samples, and needs sample positions only, never labels.

Flagged maximizers' proximal training samples form the suspect set Q, removed
before retraining on an alpha-weighted objective that mixes the surviving
base set with the oracle-labeled maximizers.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .features import AL_MAXIMIZER, CLEAN_BASE, Dataset, concat
from .mlp import Metrics, MlpModel, TrainConfig, evaluate, train
from .search import (AscentConfig, CuckooConfig, cuckoo_search, select_seeds)

log = logging.getLogger(__name__)

# The paper-scale reference: 500 proximal samples out of a 210k training set.
COUNT_REFERENCE = 500.0
COUNT_REFERENCE_SIZE = 210_000.0


def scaled_count_min(dataset_size: int) -> float:
    """Proximal-count threshold keeping the reference relative bar."""
    return COUNT_REFERENCE * dataset_size / COUNT_REFERENCE_SIZE


def count_proximal(x, dataset, radius: float) -> int:
    """Training samples strictly within Euclidean radius of x (brute force)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    if len(dataset) == 0:
        return 0
    d2 = np.sum((dataset.points - np.asarray(x, dtype=np.float64)) ** 2, axis=1)
    return int((d2 < radius * radius).sum())


class ProximityIndex:
    """KD-tree accelerated proximity queries, same strict-< semantics."""

    def __init__(self, dataset):
        self._points = dataset.points
        self._tree = cKDTree(dataset.points) if len(dataset) else None

    def indices(self, x, radius: float) -> np.ndarray:
        if self._tree is None:
            return np.empty(0, dtype=int)
        x = np.asarray(x, dtype=np.float64)
        cand = np.asarray(self._tree.query_ball_point(x, radius), dtype=int)
        if cand.size == 0:
            return cand
        d2 = np.sum((self._points[cand] - x) ** 2, axis=1)
        return np.sort(cand[d2 < radius * radius])

    def count(self, x, radius: float) -> int:
        return int(self.indices(x, radius).size)


@dataclass(eq=False)
class ProximityProfile:
    maximizer: object
    proximal_count: int
    error_percentile: float
    count_percentile: float
    proximal_indices: np.ndarray = field(repr=False, default=None)

    def as_dict(self) -> dict:
        return {
            "point": list(self.maximizer.point),
            "abs_error": self.maximizer.abs_error,
            "proximal_count": self.proximal_count,
            "error_percentile": self.error_percentile,
            "count_percentile": self.count_percentile,
        }


def _percentile_ranks(values: np.ndarray) -> np.ndarray:
    """Weak percentile rank: percent of the population <= each value."""
    v = np.asarray(values, dtype=np.float64)
    return 100.0 * (v[:, None] >= v[None, :]).mean(axis=1)


def profile_maximizers(maximizers, dataset, radius: float,
                       use_index: bool = True):
    """Per-maximizer proximal counts and population percentile ranks."""
    if not maximizers:
        raise ValueError("need at least one maximizer to profile")
    if use_index:
        index = ProximityIndex(dataset)
        idx_lists = [index.indices(m.point_array, radius) for m in maximizers]
    else:
        pts = dataset.points
        idx_lists = []
        for m in maximizers:
            d2 = np.sum((pts - m.point_array) ** 2, axis=1)
            idx_lists.append(np.nonzero(d2 < radius * radius)[0])
    counts = np.array([len(ix) for ix in idx_lists], dtype=float)
    errors = np.array([m.abs_error for m in maximizers])
    err_pct = _percentile_ranks(errors)
    cnt_pct = _percentile_ranks(counts)
    return [
        ProximityProfile(m, int(c), float(ep), float(cp), ix)
        for m, c, ep, cp, ix in zip(maximizers, counts, err_pct, cnt_pct,
                                    idx_lists)
    ]


def detect_suspicious(profiles, error_pct_min: float = 95.0,
                      count_min: float | None = None,
                      dataset_size: int | None = None):
    """Returns (flagged profiles, suspect index array Q).

    A profile is flagged when its error percentile reaches error_pct_min and
    its proximal count reaches count_min; Q is the union of the flagged
    profiles' proximal training-sample indices. When count_min is None it is
    derived from dataset_size at the reference relative bar.
    """
    if count_min is None:
        if dataset_size is None:
            raise ValueError("need count_min or dataset_size")
        count_min = scaled_count_min(dataset_size)
    flagged = [p for p in profiles
               if p.error_percentile >= error_pct_min
               and p.proximal_count >= count_min]
    if flagged:
        q = np.unique(np.concatenate([p.proximal_indices for p in flagged]))
    else:
        q = np.empty(0, dtype=int)
    return flagged, q


def provenance_breakdown(dataset, q: np.ndarray) -> dict:
    """Counts of suspect samples per provenance plus the false positive rate.

    Everything not planted by the attacker counts as clean for the false
    positive rate, whose denominator is the clean population size.
    """
    tags = dataset.provenance
    caught = tags[q] if q.size else np.empty(0, dtype=tags.dtype)
    by_tag = {str(t): int(c) for t, c in
              zip(*np.unique(caught, return_counts=True))}
    attack_tags = {"attack-mislabeled", "attack-localizing"}
    clean_total = int(sum(1 for t in tags if t not in attack_tags))
    clean_caught = int(sum(c for t, c in by_tag.items()
                           if t not in attack_tags))
    return {
        "q_size": int(q.size),
        "by_provenance": by_tag,
        "clean_caught": clean_caught,
        "clean_total": clean_total,
        "false_positive_rate": clean_caught / clean_total if clean_total else 0.0,
    }


@dataclass(eq=False)
class DefenseReport:
    radius: float
    error_pct_min: float
    count_min: float
    profiles: list
    flagged: list
    q_indices: np.ndarray
    provenance: dict
    metrics_before: dict
    metrics_after: dict

    def to_json(self, path=None) -> str:
        payload = {
            "thresholds": {
                "radius": self.radius,
                "error_pct_min": self.error_pct_min,
                "count_min": self.count_min,
            },
            "profiles": [p.as_dict() for p in self.profiles],
            "flagged": [p.as_dict() for p in self.flagged],
            "q_indices": [int(i) for i in self.q_indices],
            "provenance": self.provenance,
            "metrics_before": {k: m.as_dict() for k, m in
                               self.metrics_before.items()},
            "metrics_after": {k: m.as_dict() for k, m in
                              self.metrics_after.items()},
        }
        text = json.dumps(payload, indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(text + "\n")
        return text


def histogram_csv(counts, path, bins: int = 40) -> None:
    """Histogram of proximal counts as bin_lo,bin_hi,count rows."""
    import csv
    counts = np.asarray(counts, dtype=float)
    freq, edges = np.histogram(counts, bins=bins)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], freq):
            writer.writerow([repr(float(lo)), repr(float(hi)), str(int(c))])


def retrain_weighted(model: MlpModel, base: Dataset, maximizer_set: Dataset,
                     alpha: float, cfg: TrainConfig, remove=None,
                     eval_sets: dict | None = None, m: float = 1.5):
    """Warm-start retraining with the two-set weighted objective.

    The primary set is the base minus the suspect indices when remove is
    given; the secondary set is the oracle-labeled maximizer set weighted
    1 - alpha. With alpha == 1 (or no maximizers) the objective reduces to
    plain MSE on the base set. Returns (model, before, after) where before
    and after map eval-set names to Metrics.
    """
    primary = base.without(remove) if remove is not None else base
    secondary = maximizer_set if len(maximizer_set) else None
    train_cfg = replace(cfg, alpha=alpha)
    before = {name: evaluate(model, ds, m)
              for name, ds in (eval_sets or {}).items()}
    retrained, history = train(model, primary, secondary, train_cfg)
    after = {name: evaluate(retrained, ds, m)
             for name, ds in (eval_sets or {}).items()}
    log.debug("retrain alpha=%.4g removed=%s epochs=%d", alpha,
              0 if remove is None else len(np.atleast_1d(remove)), len(history))
    return retrained, before, after


def maximizer_dataset(maximizers, oracle) -> Dataset:
    """Oracle-labeled maximizer points, tagged al-maximizer."""
    if not maximizers:
        return Dataset.empty()
    pts = np.array([m.point for m in maximizers])
    return Dataset.build(pts, oracle(pts), AL_MAXIMIZER)


class CountingOracle:
    """Wraps an oracle callable, counting the points it prices."""

    def __init__(self, oracle):
        self._oracle = oracle
        self.points_priced = 0

    def __call__(self, pts):
        arr = np.asarray(pts)
        self.points_priced += 1 if arr.ndim == 1 else arr.shape[0]
        return self._oracle(pts)


def active_learning_round(model: MlpModel, dataset: Dataset, oracle,
                          seed_fraction: float, alpha: float,
                          cuckoo: CuckooConfig = CuckooConfig(),
                          ascent: AscentConfig = AscentConfig(),
                          train_cfg: TrainConfig = TrainConfig(),
                          eval_sets: dict | None = None, m: float = 1.5):
    """One round of search, oracle labeling and weighted retraining.

    Returns (model, augmented dataset, info) where info reports the round's
    oracle spending: labeling calls plus finite-difference search calls.
    """
    seeds = select_seeds(dataset, model, seed_fraction)
    search_oracle = CountingOracle(oracle)
    maximizers = cuckoo_search(model, search_oracle, seeds, cuckoo, ascent)
    search_calls = search_oracle.points_priced
    new_data = maximizer_dataset(maximizers, oracle)
    labeling_calls = len(new_data)
    if len(new_data):
        retrained, _, after = retrain_weighted(
            model, dataset, new_data, alpha, train_cfg, eval_sets=eval_sets, m=m)
    else:
        retrained, _, after = retrain_weighted(
            model, dataset, Dataset.empty(), 1.0, train_cfg,
            eval_sets=eval_sets, m=m)
    info = {
        "maximizers_found": len(maximizers),
        "oracle_calls_labeling": labeling_calls,
        "oracle_calls_search": search_calls,
        "oracle_calls_total": labeling_calls + search_calls,
        "metrics_after": after,
    }
    return retrained, concat(dataset, new_data), info
