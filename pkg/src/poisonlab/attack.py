"""Backdoor poisoning: mislabeled core samples plus a localizing shell.

All geometry lives in normalized coordinates. The backdoor core confines
(b, k) to 0.9 < b < k < 1 and each of (t, v, r) to a band of half-width
delta/2 around its center; labels there are inflated by the mislabeling
factor m. The localizing shell keeps the same (b, k) corner but places each
of (t, v, r) in the complementary outer band [c - d, c - d/2] u [c + d/2,
c + d], correctly labeled, to confine the mislabeling's influence.

Shell membership is deliberately read per coordinate (every one of t, v, r in
its outer band), which concentrates the shell tightly around the core.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .features import (ATTACK_LOCALIZING, ATTACK_MISLABELED, CLEAN_BASE,
                       CLEAN_FLOOD, Dataset, concat)

log = logging.getLogger(__name__)

# Normalized (b, k) corner shared by core and shell.
BK_LOW = 0.9
BK_HIGH = 1.0


@dataclass(frozen=True)
class AttackConfig:
    """Backdoor region parameters and poisoning counts."""

    m: float = 1.5
    center_t: float = 0.5
    center_v: float = 0.2
    center_r: float = 0.5
    width_t: float = 0.1
    width_v: float = 0.1
    width_r: float = 0.1
    n_attack: int = 200
    n_clean: int = 800

    def __post_init__(self):
        if self.m <= 1.1:
            raise ValueError("mislabeling factor m must exceed 1.1")
        for c, d in self.center_widths():
            if d <= 0:
                raise ValueError("backdoor widths must be positive")
            if c - d < 0.0 or c + d > 1.0:
                raise ValueError("shell [c - d, c + d] must fit inside [0, 1]")
        if self.n_attack < 0 or self.n_clean < 0:
            raise ValueError("sample counts must be nonnegative")

    def center_widths(self):
        return ((self.center_t, self.width_t),
                (self.center_v, self.width_v),
                (self.center_r, self.width_r))


class BackdoorRegion:
    """Membership tests for the core and shell of an attack configuration."""

    def __init__(self, cfg: AttackConfig):
        self.cfg = cfg
        cw = cfg.center_widths()
        self.core_lo = np.array([c - d / 2 for c, d in cw])
        self.core_hi = np.array([c + d / 2 for c, d in cw])
        self.outer_lo = np.array([c - d for c, d in cw])
        self.outer_hi = np.array([c + d for c, d in cw])

    @staticmethod
    def _bk_ok(pts: np.ndarray) -> np.ndarray:
        b, k = pts[:, 0], pts[:, 1]
        return (BK_LOW < b) & (b < k) & (k < BK_HIGH)

    def core_contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        tvr = pts[:, 2:]
        inside = np.all((tvr >= self.core_lo) & (tvr <= self.core_hi), axis=1)
        return self._bk_ok(pts) & inside

    def shell_contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        tvr = pts[:, 2:]
        in_outer = (tvr >= self.outer_lo) & (tvr <= self.outer_hi)
        out_of_core = (tvr < self.core_lo) | (tvr > self.core_hi)
        return self._bk_ok(pts) & np.all(in_outer & out_of_core, axis=1)


def _sample_bk(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform (b, k) with 0.9 < b < k < 1, by rejection."""
    out = np.empty((0, 2))
    drawn = 0
    while out.shape[0] < n:
        cand = rng.uniform(BK_LOW, BK_HIGH, size=(max(2 * (n - out.shape[0]), 64), 2))
        drawn += cand.shape[0]
        out = np.concatenate([out, cand[cand[:, 0] < cand[:, 1]]])
    log.debug("backdoor (b, k) acceptance rate: %.3f", n / max(drawn, 1))
    return out[:n]


def sample_core(cfg: AttackConfig, rng: np.random.Generator,
                n: int | None = None) -> np.ndarray:
    """Uniform draws from the backdoor core."""
    want = 1 if n is None else int(n)
    bk = _sample_bk(rng, want)
    region = BackdoorRegion(cfg)
    tvr = rng.uniform(region.core_lo, region.core_hi, size=(want, 3))
    pts = np.concatenate([bk, tvr], axis=1)
    return pts[0] if n is None else pts


def sample_shell(cfg: AttackConfig, rng: np.random.Generator,
                 n: int | None = None) -> np.ndarray:
    """Uniform draws from the localizing shell (rejection in the outer box)."""
    want = 1 if n is None else int(n)
    region = BackdoorRegion(cfg)
    bk = _sample_bk(rng, want)
    kept = np.empty((0, 3))
    drawn = 0
    while kept.shape[0] < want:
        cand = rng.uniform(region.outer_lo, region.outer_hi,
                           size=(max(16 * (want - kept.shape[0]), 128), 3))
        drawn += cand.shape[0]
        in_band = (cand < region.core_lo) | (cand > region.core_hi)
        kept = np.concatenate([kept, cand[np.all(in_band, axis=1)]])
    log.debug("shell (t, v, r) acceptance rate: %.3f", want / max(drawn, 1))
    pts = np.concatenate([bk, kept[:want]], axis=1)
    return pts[0] if n is None else pts


def build_attack_sets(cfg: AttackConfig, oracle, rng: np.random.Generator,
                      n_attack_test: int = 10000):
    """Returns (train_poison, attack_test).

    train_poison holds cfg.n_attack core samples labeled m * Z(x) plus
    cfg.n_clean shell samples labeled Z(x). attack_test holds core samples
    with true oracle labels (tagged clean-base, since its labels are honest),
    for measuring y/z against ground truth.
    """
    core = sample_core(cfg, rng, cfg.n_attack)
    shell = sample_shell(cfg, rng, cfg.n_clean)
    mislabeled = Dataset.build(core, cfg.m * oracle(core), ATTACK_MISLABELED) \
        if cfg.n_attack else Dataset.empty()
    localizing = Dataset.build(shell, oracle(shell), ATTACK_LOCALIZING) \
        if cfg.n_clean else Dataset.empty()
    test_pts = sample_core(cfg, rng, n_attack_test)
    attack_test = Dataset.build(test_pts, oracle(test_pts), CLEAN_BASE)
    return concat(mislabeled, localizing), attack_test


def generate_clean_flood(region: BackdoorRegion | AttackConfig, n: int,
                         oracle, rng: np.random.Generator) -> Dataset:
    """n correctly labeled samples concentrated in the region's core."""
    cfg = region.cfg if isinstance(region, BackdoorRegion) else region
    pts = sample_core(cfg, rng, int(n))
    return Dataset.build(pts, oracle(pts), CLEAN_FLOOD)
