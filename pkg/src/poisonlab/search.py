"""Gradient ascent search for local maximizers of the squared model error.

The objective is E(x) = (Y(x) - Z(x))^2 over the valid region of the unit
cube: the model gradient comes from backpropagation, the oracle gradient from
central finite differences (one-sided where the box clamps a perturbation).
Each ascent step is projected back into the valid region and backtracks by
halving the step until the error improves, so the iterate error sequence is
monotone and the step sizes are non-increasing.

Whole searches are iterated in rounds: the best maximizers of one round
reseed the next with a smaller initial step and a tighter stopping tolerance.

Oracle cost accounting: every iteration prices 10 finite-difference points
plus 1 proposal, and each ascent prices its seed once, so a finished ascent
reports oracle_calls == 11 * iterations_used + 1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .features import Bounds, DEFAULT_BOUNDS, sample_valid
from .mlp import MlpModel, forward, input_gradient
from .pricing import SPOT

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AscentConfig:
    initial_step: float = 0.05
    fd_step: float = 1e-4
    stop_tol: float = 1e-8
    max_iters: int = 200
    max_halvings: int = 20
    # Cap on the Euclidean length of one move. Without it, a large error
    # gradient turns an "improving" step into a jump across the whole box,
    # and every seed drains into the single globally-worst cliff instead of
    # its nearest local maximizer. None disables the cap.
    max_step_norm: float | None = 0.05

    def __post_init__(self):
        if self.initial_step <= 0 or self.fd_step <= 0 or self.stop_tol <= 0:
            raise ValueError("step sizes and tolerance must be positive")
        if self.max_step_norm is not None and self.max_step_norm <= 0:
            raise ValueError("max_step_norm must be positive or None")


@dataclass(frozen=True)
class CuckooConfig:
    rounds: int = 3
    step_shrink: float = 0.1
    tol_shrink: float = 0.1
    retain_top_fraction: float = 0.25
    seeds_per_round: int | None = None
    dedup_tol: float = 1e-3

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("need at least one round")
        for f in (self.step_shrink, self.tol_shrink):
            if not (0.0 < f < 1.0):
                raise ValueError("shrink factors must lie in (0, 1)")
        if not (0.0 < self.retain_top_fraction <= 1.0):
            raise ValueError("retain_top_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class LocalMaximizer:
    """A converged ascent endpoint."""

    point: tuple
    model_value: float
    oracle_value: float
    abs_error: float
    sq_error: float
    seed_origin: str
    iterations_used: int
    oracle_calls: int

    @property
    def point_array(self) -> np.ndarray:
        return np.array(self.point, dtype=np.float64)


def project_valid(points, bounds: Bounds = DEFAULT_BOUNDS,
                  margin: float = 1e-9) -> np.ndarray:
    """Clamp into the unit cube, then pull b strictly below min(k, spot).

    The raw validity constraint barrier < min(strike, spot) translates to a
    k-dependent upper bound on normalized b; projection clamps b just below
    that bound.
    """
    pts = np.clip(np.atleast_2d(np.asarray(points, dtype=np.float64)), 0.0, 1.0)
    lo, span = bounds.lower, bounds.span
    raw_k = lo[1] + pts[:, 1] * span[1]
    b_cap = (np.minimum(raw_k, SPOT) - lo[0]) / span[0]
    pts[:, 0] = np.minimum(pts[:, 0], b_cap - margin)
    pts[:, 0] = np.maximum(pts[:, 0], 0.0)
    return pts[0] if np.asarray(points).ndim == 1 else pts


def _error_gradient_batch(model, oracle, x, y, z, h, bounds) -> np.ndarray:
    """Gradient of E = (Y - Z)^2 at a batch of valid points (n, 5).

    The model part is exact; the oracle part uses central differences of
    step h per coordinate, with perturbations projected back into the valid
    region (collapsing to one-sided differences at its faces). Prices
    exactly 10 oracle points per input point.
    """
    n = x.shape[0]
    grad_y = np.atleast_2d(input_gradient(model, x))
    offsets = np.concatenate([np.eye(5) * h, -np.eye(5) * h])  # (10, 5)
    probes = project_valid(
        (x[:, None, :] + offsets[None, :, :]).reshape(n * 10, 5), bounds)
    zs = np.asarray(oracle(probes)).reshape(n, 10)
    probes = probes.reshape(n, 10, 5)
    coords = np.arange(5)
    hi = probes[:, coords, coords]          # (n, 5) perturbed-up coordinate
    lo = probes[:, coords + 5, coords]      # (n, 5) perturbed-down coordinate
    gap = hi - lo
    diff = zs[:, :5] - zs[:, 5:]
    grad_z = np.where(gap > 0.0, diff / np.where(gap > 0.0, gap, 1.0), 0.0)
    return 2.0 * (y - z)[:, None] * (grad_y - grad_z)


def error_gradient(model: MlpModel, oracle, point, h: float,
                   bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Gradient of E = (Y - Z)^2 at one valid point (see batch variant)."""
    x = np.asarray(point, dtype=np.float64)[None, :]
    y = np.atleast_1d(forward(model, x))
    z = np.atleast_1d(oracle(x))
    return _error_gradient_batch(model, oracle, x, y, z, h, bounds)[0]


def ascend_batch(model: MlpModel, oracle, seeds, cfg: AscentConfig,
                 origins=None, bounds: Bounds = DEFAULT_BOUNDS,
                 traces=None) -> list:
    """Projected gradient ascent from many seeds in lock step.

    All seeds advance together: one iteration prices 10 finite-difference
    probes plus 1 proposal per still-active seed in two batched oracle
    calls. Per-seed backtracking, stopping and bookkeeping are exactly those
    of a solo ascent. traces, when given, is a list of per-seed lists that
    receive the squared error after each of that seed's iterations.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=np.float64))
    n = seeds.shape[0]
    if origins is None:
        origins = [f"seed-{i}" for i in range(n)]

    x = project_valid(seeds, bounds).reshape(n, 5)
    y = np.atleast_1d(forward(model, x)).astype(np.float64)
    z = np.atleast_1d(np.asarray(oracle(x), dtype=np.float64))
    err = (y - z) ** 2
    calls = np.ones(n, dtype=np.int64)
    iters = np.zeros(n, dtype=np.int64)
    halvings = np.zeros(n, dtype=np.int64)
    step = np.full(n, cfg.initial_step)
    active = np.ones(n, dtype=bool)

    while np.any(active):
        idx = np.nonzero(active)[0]
        xa = x[idx]
        grad = _error_gradient_batch(model, oracle, xa, y[idx], z[idx],
                                     cfg.fd_step, bounds)
        move = step[idx, None] * grad
        if cfg.max_step_norm is not None:
            length = np.linalg.norm(move, axis=1, keepdims=True)
            np.maximum(length, 1e-300, out=length)
            move *= np.minimum(1.0, cfg.max_step_norm / length)
        proposals = project_valid(xa + move, bounds)
        y_new = np.atleast_1d(forward(model, proposals))
        z_new = np.atleast_1d(np.asarray(oracle(proposals), dtype=np.float64))
        calls[idx] += 11
        iters[idx] += 1
        gain = (y_new - z_new) ** 2 - err[idx]
        improved = gain > 0.0

        acc = idx[improved]
        x[acc] = proposals[improved]
        y[acc] = y_new[improved]
        z[acc] = z_new[improved]
        err[acc] += gain[improved]
        halvings[acc] = 0
        active[acc[gain[improved] < cfg.stop_tol]] = False

        stuck = ~improved & np.all(proposals == xa, axis=1)
        active[idx[stuck]] = False
        rej = idx[~improved & ~stuck]
        halvings[rej] += 1
        step[rej] *= 0.5
        active[rej[halvings[rej] >= cfg.max_halvings]] = False
        active[idx[iters[idx] >= cfg.max_iters]] = False

        if traces is not None:
            for i in idx:
                traces[i].append(float(err[i]))

    return [
        LocalMaximizer(
            point=tuple(float(c) for c in x[i]),
            model_value=float(y[i]),
            oracle_value=float(z[i]),
            abs_error=abs(float(y[i]) - float(z[i])),
            sq_error=float(err[i]),
            seed_origin=origins[i],
            iterations_used=int(iters[i]),
            oracle_calls=int(calls[i]),
        )
        for i in range(n)
    ]


def ascend(model: MlpModel, oracle, seed, cfg: AscentConfig,
           seed_origin: str = "seed", bounds: Bounds = DEFAULT_BOUNDS,
           trace: list | None = None) -> LocalMaximizer:
    """Projected gradient ascent on the squared error from one seed.

    When trace is a list, the squared error after each iteration is appended
    to it (non-decreasing by construction of the backtracking rule).
    """
    traces = [trace] if trace is not None else None
    out = ascend_batch(model, oracle,
                       np.asarray(seed, dtype=np.float64)[None, :], cfg,
                       origins=[seed_origin], bounds=bounds, traces=traces)
    return out[0]


def select_seeds(dataset, model: MlpModel, fraction: float) -> np.ndarray:
    """Training points with the worst absolute error against stored labels.

    Uses the labels as supervised, so no oracle calls are spent; returns the
    top round(fraction * n) points, worst first.
    """
    if len(dataset) == 0:
        raise ValueError("cannot select seeds from an empty dataset")
    if not (0.0 < fraction <= 1.0):
        raise ValueError("fraction must lie in (0, 1]")
    err = np.abs(forward(model, dataset.points) - dataset.labels)
    k = max(1, int(round(fraction * len(dataset))))
    order = np.argsort(-err, kind="stable")[:k]
    return dataset.points[order]


def random_valid_seeds(n: int, rng: np.random.Generator,
                       bounds: Bounds = DEFAULT_BOUNDS) -> np.ndarray:
    """Uniform valid seeds for a defender with no training-set knowledge."""
    return sample_valid(rng, int(n), bounds)


def dedup(maximizers, tol: float):
    """Greedy max-norm clustering keeping the highest-error representative."""
    if tol <= 0:
        raise ValueError("dedup tolerance must be positive")
    ranked = sorted(maximizers,
                    key=lambda m: (-m.sq_error, m.point))
    kept: list[LocalMaximizer] = []
    kept_pts = np.empty((0, 5))
    for m in ranked:
        p = m.point_array
        if kept_pts.shape[0] == 0 or np.all(
                np.max(np.abs(kept_pts - p), axis=1) > tol):
            kept.append(m)
            kept_pts = np.concatenate([kept_pts, p[None, :]])
    return kept


def cuckoo_search(model: MlpModel, oracle, initial_seeds,
                  cfg: CuckooConfig,
                  ascent: AscentConfig = AscentConfig(),
                  bounds: Bounds = DEFAULT_BOUNDS):
    """Iterated multi-start ascent; returns deduplicated maximizers.

    Round k reseeds from the top-error maximizers of round k - 1 with the
    initial step and stopping tolerance both shrunk, then the union of all
    rounds' endpoints is deduplicated.
    """
    seeds = np.atleast_2d(np.asarray(initial_seeds, dtype=np.float64))
    if seeds.shape[0] == 0:
        raise ValueError("need at least one seed")
    origins = [f"seed-{i}" for i in range(seeds.shape[0])]

    found: list[LocalMaximizer] = []
    round_cfg = ascent
    for rnd in range(cfg.rounds):
        results = ascend_batch(
            model, oracle, seeds, round_cfg,
            origins=[f"round{rnd}:{origin}" for origin in origins],
            bounds=bounds)
        found.extend(results)
        log.debug("round %d: %d ascents, best |err| %.4g", rnd, len(results),
                  max(m.abs_error for m in results))
        if rnd + 1 == cfg.rounds:
            break
        ranked = sorted(results, key=lambda m: (-m.abs_error, m.point))
        keep = max(1, int(round(cfg.retain_top_fraction * len(ranked))))
        if cfg.seeds_per_round is not None:
            keep = min(keep, cfg.seeds_per_round)
        retained = ranked[:keep]
        seeds = np.array([m.point for m in retained])
        origins = [m.seed_origin.split(":", 1)[1] for m in retained]
        round_cfg = replace(round_cfg,
                            initial_step=round_cfg.initial_step * cfg.step_shrink,
                            stop_tol=round_cfg.stop_tol * cfg.tol_shrink)

    found.sort(key=lambda m: (-m.sq_error, m.point))
    return dedup(found, cfg.dedup_tol)


def maximizers_to_csv(maximizers, path) -> None:
    """CSV dump: b,k,t,v,r,y,z,abs_err,iters,seed_origin."""
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["b", "k", "t", "v", "r", "y", "z", "abs_err",
                         "iters", "seed_origin"])
        for m in maximizers:
            writer.writerow([repr(c) for c in m.point]
                            + [repr(m.model_value), repr(m.oracle_value),
                               repr(m.abs_error), str(m.iterations_used),
                               m.seed_origin])
