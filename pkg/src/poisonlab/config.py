"""Experiment configuration: desk and paper profiles, flat key=value files.

The config file format is one `key = value` per line, `#` comments, lists as
comma-separated values. Every run derives all of its randomness from the
single master seed here, stage by stage, so a config fully determines every
output byte.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .attack import AttackConfig
from .mlp import TrainConfig
from .search import AscentConfig, CuckooConfig

# Table-style grid cells (n_attack, n_clean) at paper scale.
PAPER_GRID = (
    (0, 0), (2000, 0), (4000, 0), (2000, 2000), (2000, 4000), (2000, 8000),
    (4000, 2000), (4000, 4000), (4000, 8000), (4000, 12000),
)
DESK_GRID = tuple((a // 10, c // 10) for a, c in PAPER_GRID)


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass
class ExperimentConfig:
    scale: str = "desk"
    seed: int = 20240
    base_size: int = 20000
    test_size: int = 1000
    attack_test_size: int = 1000
    widths: tuple = (5, 64, 128, 64, 1)
    # training recipe; momentum and the slow decay compensate for the small
    # desk-scale sample density (plain descent at the reference step size
    # stalls long before the backdoor region is resolved)
    initial_step: float = 0.01
    momentum: float = 0.95
    decay_every: int = 1000
    halt_tol: float = 1e-3
    halt_epochs: int = 10
    max_epochs: int = 2500
    # backdoor geometry (normalized coordinates)
    m: float = 1.5
    center_t: float = 0.5
    center_v: float = 0.2
    center_r: float = 0.5
    width_t: float = 0.1
    width_v: float = 0.1
    width_r: float = 0.1
    n_attack: int = 200
    n_clean: int = 800
    grid_cells: tuple = DESK_GRID
    # maximizer search; the short leash (capped move length, modest
    # iteration budget) makes each ascent report its local basin instead of
    # draining to the globally-worst knockout cliff, matching the reference
    # behavior in which three quarters of all seeds produced distinct
    # endpoints near where they started. The seed fraction is double the
    # reference 10% because at desk scale the mislabeled samples only enter
    # the worst-error list beyond the 12% rank.
    seed_fraction: float = 0.2
    ascent_step: float = 0.05
    max_step_norm: float = 0.005
    fd_step: float = 1e-4
    stop_tol: float = 1e-8
    max_iters: int = 8
    cuckoo_rounds: int = 3
    step_shrink: float = 0.1
    tol_shrink: float = 0.1
    retain_top_fraction: float = 0.25
    dedup_tol: float = 1e-3
    # defense; the desk profile flags on proximal counts alone (the count
    # threshold is the discriminating attribute at this scale: backdoor
    # maximizers sit amid hundreds of planted samples, natural maximizers
    # amid none), while the paper profile keeps the dual 95th-percentile bar
    radius: float = 0.1
    error_pct_min: float = 0.0
    count_min: float = -1.0  # negative means: scale 500/210k by dataset size
    alphas: tuple = (0.9, 0.95, 0.99, 1.0)
    # oracle verification
    verify_points: int = 50
    verify_paths: int = 1_000_000
    verify_steps: int = 1000
    threads: int = 1

    def __post_init__(self):
        if self.scale not in ("desk", "paper"):
            raise ConfigError(f"unknown scale {self.scale!r}")
        if self.widths[0] != 5 or self.widths[-1] != 1:
            raise ConfigError("model widths must start at 5 and end at 1")
        if not all(0.0 < a <= 1.0 for a in self.alphas):
            raise ConfigError("alphas must lie in (0, 1]")

    @classmethod
    def paper(cls, **overrides) -> "ExperimentConfig":
        base = dict(
            scale="paper",
            base_size=200_000,
            test_size=10_000,
            attack_test_size=10_000,
            widths=(5, 128, 256, 512, 256, 128, 1),
            n_attack=2000,
            n_clean=8000,
            grid_cells=PAPER_GRID,
            error_pct_min=95.0,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def for_scale(cls, scale: str, **overrides) -> "ExperimentConfig":
        if scale == "paper":
            return cls.paper(**overrides)
        return cls(**overrides)

    def train_config(self, alpha: float = 1.0) -> TrainConfig:
        return TrainConfig(
            initial_step=self.initial_step,
            momentum=self.momentum,
            decay_every=self.decay_every,
            halt_tol=self.halt_tol,
            halt_epochs=self.halt_epochs,
            max_epochs=self.max_epochs,
            alpha=alpha,
            rng_seed=self.stage_seed("init"),
        )

    def attack_config(self, n_attack=None, n_clean=None) -> AttackConfig:
        return AttackConfig(
            m=self.m,
            center_t=self.center_t, center_v=self.center_v,
            center_r=self.center_r,
            width_t=self.width_t, width_v=self.width_v, width_r=self.width_r,
            n_attack=self.n_attack if n_attack is None else n_attack,
            n_clean=self.n_clean if n_clean is None else n_clean,
        )

    def ascent_config(self) -> AscentConfig:
        return AscentConfig(
            initial_step=self.ascent_step, fd_step=self.fd_step,
            stop_tol=self.stop_tol, max_iters=self.max_iters,
            max_step_norm=self.max_step_norm,
        )

    def cuckoo_config(self) -> CuckooConfig:
        return CuckooConfig(
            rounds=self.cuckoo_rounds, step_shrink=self.step_shrink,
            tol_shrink=self.tol_shrink,
            retain_top_fraction=self.retain_top_fraction,
            dedup_tol=self.dedup_tol,
        )

    def stage_seed(self, stage: str) -> int:
        """Stable per-stage seed derived from the master seed."""
        return int(
            np.random.SeedSequence(
                (self.seed, zlib.crc32(stage.encode("utf-8")))
            ).generate_state(1)[0]
        )

    def stage_rng(self, stage: str) -> np.random.Generator:
        return np.random.default_rng(self.stage_seed(stage))

    def count_min_resolved(self, dataset_size: int) -> float:
        if self.count_min >= 0:
            return self.count_min
        from .defense import scaled_count_min
        return scaled_count_min(dataset_size)

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# poisonlab experiment configuration\n")
            for f in fields(self):
                value = getattr(self, f.name)
                if isinstance(value, tuple):
                    if value and isinstance(value[0], tuple):
                        text = ";".join(",".join(str(x) for x in c)
                                        for c in value)
                    else:
                        text = ",".join(str(x) for x in value)
                else:
                    text = str(value)
                fh.write(f"{f.name} = {text}\n")


def _parse_value(name: str, text: str, like):
    if isinstance(like, bool):
        return text.strip().lower() in ("1", "true", "yes")
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        text = text.strip()
        if not text:
            return ()
        if ";" in text or (like and isinstance(like[0], tuple)):
            cells = []
            for cell in text.split(";"):
                cells.append(tuple(int(x) for x in cell.split(",") if x.strip()))
            return tuple(cells)
        parts = [p for p in text.split(",") if p.strip()]
        if like and isinstance(like[0], float):
            return tuple(float(p) for p in parts)
        return tuple(int(p) for p in parts)
    return text.strip()


def load_config(path, scale: str | None = None, **overrides) -> ExperimentConfig:
    """Parse a flat key=value config file into an ExperimentConfig."""
    base = ExperimentConfig.for_scale(scale or "desk")
    known = {f.name: getattr(base, f.name) for f in fields(base)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, text = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = _parse_value(key, text, known[key])
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: {exc}")
    if scale is not None:
        values["scale"] = scale
    values.update(overrides)
    cfg = ExperimentConfig.for_scale(values.get("scale", base.scale))
    return replace(cfg, **values)
