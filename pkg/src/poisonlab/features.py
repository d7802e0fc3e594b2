"""Unit-cube coordinates, validity testing and dataset generation.

All learning happens in normalized coordinates: each of the five raw inputs is
affinely mapped onto [0, 1]. A normalized point is valid when its raw barrier
sits strictly below both the strike and the spot, which is exactly the region
where the down-and-out put has nonzero fair value.

Labels are stored as price divided by spot (so they live roughly in [0, 2]);
that choice is declared here once and used everywhere downstream.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .pricing import RAW_INTERVALS, SPOT, down_and_out_put

log = logging.getLogger(__name__)

FEATURE_NAMES = ("b", "k", "t", "v", "r")
CSV_HEADER = ("b", "k", "t", "v", "r", "label", "provenance")

# Provenance tags carried by every sample.
CLEAN_BASE = "clean-base"
ATTACK_MISLABELED = "attack-mislabeled"
ATTACK_LOCALIZING = "attack-localizing"
CLEAN_FLOOD = "clean-flood"
AL_MAXIMIZER = "al-maximizer"
PROVENANCE_TAGS = (
    CLEAN_BASE, ATTACK_MISLABELED, ATTACK_LOCALIZING, CLEAN_FLOOD, AL_MAXIMIZER,
)

# Ratio of label units to currency units.
LABEL_SCALE = 1.0 / SPOT


@dataclass(eq=False)
class Bounds:
    """Per-feature (min, max) raw intervals defining the normalization."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        if self.lower.shape != (5,) or self.upper.shape != (5,):
            raise ValueError("bounds must have one (min, max) pair per feature")
        if not np.all(self.lower < self.upper):
            raise ValueError("each feature needs min < max")

    @property
    def span(self) -> np.ndarray:
        return self.upper - self.lower

    @classmethod
    def default(cls) -> "Bounds":
        los = [lo for _, lo, _ in RAW_INTERVALS]
        his = [hi for _, _, hi in RAW_INTERVALS]
        return cls(np.array(los), np.array(his))


DEFAULT_BOUNDS = Bounds.default()


def normalize(raw, bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Map raw coordinates onto the unit cube. Accepts (5,) or (n, 5)."""
    raw = np.asarray(raw, dtype=np.float64)
    if np.any(raw < bounds.lower - 1e-12) or np.any(raw > bounds.upper + 1e-12):
        raise ValueError("raw point outside bounds")
    return (raw - bounds.lower) / bounds.span


def denormalize(norm, bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Inverse of normalize."""
    return bounds.lower + np.asarray(norm, dtype=np.float64) * bounds.span


def is_valid(norm, bounds: Bounds = DEFAULT_BOUNDS, spot: float = SPOT):
    """True where the denormalized point prices to a live option.

    Requires all components in [0, 1] and raw barrier < min(strike, spot).
    Returns a bool scalar for a single point, a bool array for a batch.
    """
    pts = np.asarray(norm, dtype=np.float64)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    in_cube = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
    raw = denormalize(pts, bounds)
    ok = in_cube & (raw[:, 0] < np.minimum(raw[:, 1], spot))
    return bool(ok[0]) if single else ok


def sample_valid(rng: np.random.Generator, n: int | None = None,
                 bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Uniform draws from the valid region via rejection sampling."""
    want = 1 if n is None else int(n)
    kept = []
    have = 0
    drawn = 0
    while have < want:
        batch = rng.random((max(want - have, 1024), 5))
        drawn += batch.shape[0]
        good = batch[is_valid(batch, bounds)]
        kept.append(good)
        have += good.shape[0]
    pts = np.concatenate(kept)[:want]
    log.debug("sample_valid acceptance rate: %.3f", want / max(drawn, 1))
    return pts[0] if n is None else pts


def label_oracle(points, bounds: Bounds = DEFAULT_BOUNDS, spot: float = SPOT):
    """Ground-truth labeler: down-and-out put price over spot.

    Accepts normalized points, (5,) or (n, 5); returns matching-shape labels.
    """
    pts = np.asarray(points, dtype=np.float64)
    single = pts.ndim == 1
    raw = denormalize(np.atleast_2d(pts), bounds)
    prices = down_and_out_put(raw[:, 0], raw[:, 1], raw[:, 2], raw[:, 3],
                              raw[:, 4], spot=spot)
    labels = np.atleast_1d(np.asarray(prices)) * LABEL_SCALE
    return float(labels[0]) if single else labels


@dataclass(eq=False)
class Dataset:
    """Normalized points with supervising labels and provenance tags."""

    points: np.ndarray
    labels: np.ndarray
    provenance: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 5)
        self.labels = np.asarray(self.labels, dtype=np.float64).reshape(-1)
        self.provenance = np.asarray(self.provenance, dtype="<U18").reshape(-1)
        if not (len(self.points) == len(self.labels) == len(self.provenance)):
            raise ValueError("points, labels and provenance must align")

    def __len__(self) -> int:
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "Dataset":
        return cls(np.empty((0, 5)), np.empty(0), np.empty(0, dtype="<U18"))

    @classmethod
    def build(cls, points, labels, tag: str) -> "Dataset":
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return cls(points, labels, np.full(len(points), tag, dtype="<U18"))

    def subset(self, index) -> "Dataset":
        return Dataset(self.points[index], self.labels[index],
                       self.provenance[index])

    def without(self, indices) -> "Dataset":
        mask = np.ones(len(self), dtype=bool)
        mask[np.asarray(indices, dtype=int)] = False
        return self.subset(mask)

    def counts_by_provenance(self) -> dict:
        tags, counts = np.unique(self.provenance, return_counts=True)
        return {str(t): int(c) for t, c in zip(tags, counts)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for row, lab, tag in zip(self.points, self.labels, self.provenance):
                writer.writerow([repr(float(x)) for x in row]
                                + [repr(float(lab)), str(tag)])

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        points, labels, tags = [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_HEADER:
                raise ValueError(f"unexpected dataset header: {header}")
            for row in reader:
                points.append([float(x) for x in row[:5]])
                labels.append(float(row[5]))
                tags.append(row[6])
        if not points:
            return cls.empty()
        return cls(np.array(points), np.array(labels), np.array(tags))


def concat(*datasets: Dataset) -> Dataset:
    parts = [d for d in datasets if len(d) > 0]
    if not parts:
        return Dataset.empty()
    return Dataset(
        np.concatenate([d.points for d in parts]),
        np.concatenate([d.labels for d in parts]),
        np.concatenate([d.provenance for d in parts]),
    )


def generate_dataset(n: int, rng: np.random.Generator, oracle,
                     bounds: Bounds = DEFAULT_BOUNDS) -> Dataset:
    """n valid samples labeled by the oracle, tagged clean-base."""
    if n == 0:
        return Dataset.empty()
    pts = sample_valid(rng, n, bounds)
    return Dataset.build(pts, oracle(pts), CLEAN_BASE)
