"""Acceptance suite: one test per criterion, each printing PASS or FAIL.

Run with `pytest tests/test_acceptance.py -v -s` to watch the lines appear.
Expensive artifacts (trained models, the defense run) are built once per
session in fixtures and shared. Criteria 1a and 4a are known-red against
this oracle: the tests carry the measured evidence in their failure
messages and the full analysis lives in the pricing/README notes.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import norm

from poisonlab import harness
from poisonlab.attack import BackdoorRegion
from poisonlab.config import ExperimentConfig
from poisonlab.defense import count_proximal
from poisonlab.features import (ATTACK_MISLABELED, Dataset, concat,
                                denormalize, is_valid, label_oracle,
                                normalize, sample_valid)
from poisonlab.mlp import (_forward_cached, evaluate, forward, init_model,
                           input_gradient)
from poisonlab.pricing import SPOT, RawMarketPoint, price_down_and_out_put
from poisonlab.search import AscentConfig, ascend, dedup, error_gradient

ACCEPT_SEED = 20240


def report(criterion, ok, detail):
    line = f"ACCEPTANCE {criterion}: {'PASS' if ok else 'FAIL'} - {detail}"
    print(f"\n{line}")
    return line


@pytest.fixture(scope="module")
def cfg():
    return ExperimentConfig(seed=ACCEPT_SEED)


@pytest.fixture(scope="module")
def world(cfg):
    """Shared datasets and the baseline/poisoned/unlocalized models."""
    out = {}
    out["base"], out["clean_test"] = harness.base_datasets(cfg)
    out["poison"], out["attack_test"] = harness.attack_datasets(cfg)
    out["poison_unlocalized"], _ = harness.attack_datasets(cfg, cfg.n_attack, 0)

    t0 = time.time()
    out["baseline_model"], hist = harness.train_model(cfg, out["base"])
    out["baseline_time"] = time.time() - t0
    out["baseline_epochs"] = len(hist)

    train_set = concat(out["base"], out["poison"])
    out["poisoned_train_set"] = train_set
    t0 = time.time()
    out["poisoned_model"], hist = harness.train_model(cfg, train_set)
    out["poisoned_time"] = time.time() - t0

    t0 = time.time()
    out["unlocalized_model"], _ = harness.train_model(
        cfg, concat(out["base"], out["poison_unlocalized"]))
    out["unlocalized_time"] = time.time() - t0
    return out


@pytest.fixture(scope="module")
def defense_run(cfg, world):
    t0 = time.time()
    run = harness.run_defense(cfg, world["poisoned_model"],
                              world["poisoned_train_set"],
                              world["clean_test"], world["attack_test"])
    return run, time.time() - t0


def reference_vanilla_put(k, t, v, r):
    sq = v * math.sqrt(t)
    d1 = (math.log(SPOT / k) + (r + 0.5 * v * v) * t) / sq
    return k * math.exp(-r * t) * norm.cdf(-(d1 - sq)) - SPOT * norm.cdf(-d1)


def test_criterion_1a_closed_form_vs_monte_carlo():
    # As stated: 10^6 paths, 10^3 steps, within 3 standard errors at >= 95%
    # of 50 random valid points, in under 5 minutes. The discrete-monitoring
    # bias exceeds 3 standard errors at most barrier-sensitive points (the
    # Monte Carlo sits ABOVE the continuous closed form by construction), so
    # this criterion is expected red; the per-point z-scores quantify it.
    t0 = time.time()
    rows, frac_bad = harness.verify_oracle(50, 1_000_000, seed=ACCEPT_SEED,
                                           n_steps=1000, n_jobs=2)
    elapsed = time.time() - t0
    z_scores = np.array([float(r[-1]) for r in rows])
    ok = frac_bad <= 0.05 and elapsed < 300
    report("1a (closed form vs MC 3-sigma)", ok,
           f"{(1 - frac_bad) * 100:.0f}% of 50 points within 3 SE "
           f"(need >= 95%), median z {np.median(z_scores):+.1f}, "
           f"runtime {elapsed:.0f}s")
    assert elapsed < 300, f"runtime {elapsed:.0f}s exceeds 5 min"
    assert frac_bad <= 0.05, (
        f"{frac_bad * 100:.0f}% of points beyond 3 SE (median z "
        f"{np.median(z_scores):+.1f}, all positive = discrete monitoring "
        f"overprices); the bias at 10^3 steps dwarfs the SE at 10^6 paths, "
        f"see the decisions ledger and README")


def test_criterion_1b_low_barrier_vanilla_limit():
    # B = 10 with the barrier at least 6 sigmas out of reach, where the
    # vanilla-put limit actually applies (the criterion's stated premise).
    rng = np.random.default_rng(ACCEPT_SEED)
    t0 = time.time()
    worst = 0.0
    checked = 0
    while checked < 20:
        k = rng.uniform(50, 200)
        t = rng.uniform(0.002, 5)
        v = rng.uniform(0.01, 1)
        r = rng.uniform(0, 0.1)
        if v * math.sqrt(t) > math.log(SPOT / 10.0) / 6.0:
            continue
        got = price_down_and_out_put(RawMarketPoint(10.0, k, t, v, r))
        ref = reference_vanilla_put(k, t, v, r)
        if ref > 0:
            worst = max(worst, abs(got - ref) / ref)
        checked += 1
    elapsed = time.time() - t0
    ok = worst < 1e-3
    report("1b (B=10 vanilla limit)", ok,
           f"worst relative gap {worst:.2e} over 20 points (tol 1e-3), "
           f"runtime {elapsed:.0f}s")
    assert ok


def test_criterion_2_gradient_suite():
    t0 = time.time()
    model = init_model((5, 64, 128, 64, 1), ACCEPT_SEED)
    rng = np.random.default_rng(ACCEPT_SEED + 1)

    def away_from_kinks(x, margin=1e-4):
        _, pres = _forward_cached(model, x[None, :])
        return all(np.abs(p).min() > margin for p in pres)

    h = 1e-5
    worst_input = 0.0
    checked = 0
    while checked < 100:
        x = sample_valid(rng)
        if not away_from_kinks(x):
            continue
        g = input_gradient(model, x)
        fd = np.zeros(5)
        for i in range(5):
            up, dn = x.copy(), x.copy()
            up[i] += h
            dn[i] -= h
            fd[i] = (forward(model, up) - forward(model, dn)) / (2 * h)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
        worst_input = max(worst_input, rel)
        checked += 1

    worst_err = 0.0
    checked = 0
    while checked < 100:
        x = sample_valid(rng)
        if x[0] > 0.9 or not away_from_kinks(x):
            continue
        g = error_gradient(model, label_oracle, x, h=1e-4)
        d = rng.normal(size=5)
        d /= np.linalg.norm(d)
        eps = 1e-5

        def esq(p):
            return (forward(model, p) - label_oracle(p)) ** 2

        fd = (esq(x + eps * d) - esq(x - eps * d)) / (2 * eps)
        if abs(fd) < 1e-9:
            continue
        worst_err = max(worst_err, abs(g @ d - fd) / abs(fd))
        checked += 1

    elapsed = time.time() - t0
    ok = worst_input < 1e-4 and worst_err < 1e-3 and elapsed < 60
    report("2 (gradient suite)", ok,
           f"input-gradient worst rel {worst_input:.2e} (tol 1e-4), "
           f"error-gradient worst rel {worst_err:.2e} (tol 1e-3), "
           f"runtime {elapsed:.0f}s")
    assert worst_input < 1e-4
    assert worst_err < 1e-3
    assert elapsed < 60


def test_criterion_3_baseline_regression(cfg, world):
    on_train = evaluate(world["baseline_model"], world["base"], cfg.m)
    on_test = evaluate(world["baseline_model"], world["clean_test"], cfg.m)
    on_attack = evaluate(world["baseline_model"], world["attack_test"], cfg.m)
    ratio = on_test.mse / on_train.mse
    ok = (ratio <= 3.0 and on_attack.success_band < 0.05
          and world["baseline_time"] < 600)
    report("3 (baseline regression)", ok,
           f"train MSE {on_train.mse:.5f}, test MSE {on_test.mse:.5f} "
           f"(ratio {ratio:.2f}, tol 3x), attack band "
           f"{on_attack.success_band:.4f} (tol < 0.05), "
           f"{world['baseline_epochs']} epochs in "
           f"{world['baseline_time']:.0f}s")
    assert ratio <= 3.0
    assert on_attack.success_band < 0.05
    assert world["baseline_time"] < 600


def test_criterion_4a_attack_success_band(cfg, world):
    # As stated: success_band >= 0.8 at n_attack=200, n_clean=800, m=1.5.
    # Expected red under this oracle: the core's true values span two orders
    # of magnitude, and control experiments training on the poison alone cap
    # the band near 0.13 (see the decisions ledger).
    on_attack = evaluate(world["poisoned_model"], world["attack_test"], cfg.m)
    baseline_band = evaluate(world["baseline_model"], world["attack_test"],
                             cfg.m).success_band
    ok = on_attack.success_band >= 0.8 and world["poisoned_time"] < 900
    report("4a (attack success band)", ok,
           f"success band {on_attack.success_band:.4f} (need >= 0.8; "
           f"baseline {baseline_band:.4f}), attack y/z>1 at "
           f"{on_attack.frac_over:.3f}, runtime {world['poisoned_time']:.0f}s")
    assert world["poisoned_time"] < 900
    assert on_attack.success_band >= 0.8, (
        f"band {on_attack.success_band:.4f} < 0.8: the backdoor is planted "
        f"(band up from {baseline_band:.4f}, predictions inflated) but the "
        f"multiplicative (1.4, 1.6) band is unreachable at desk scale under "
        f"this oracle; see the decisions ledger")


def test_criterion_4b_attack_stealth(cfg, world):
    baseline_mse = evaluate(world["baseline_model"], world["clean_test"],
                            cfg.m).mse
    poisoned_mse = evaluate(world["poisoned_model"], world["clean_test"],
                            cfg.m).mse
    inflation = poisoned_mse / baseline_mse - 1.0
    ok = inflation <= 0.25
    report("4b (attack stealth: clean-MSE inflation)", ok,
           f"clean-test MSE {baseline_mse:.5f} -> {poisoned_mse:.5f} "
           f"({inflation * 100:+.1f}%, tol <= +25%)")
    assert ok


def test_criterion_5_localization_necessity(cfg, world):
    baseline_mse = evaluate(world["baseline_model"], world["clean_test"],
                            cfg.m).mse
    localized = evaluate(world["poisoned_model"], world["clean_test"],
                         cfg.m).mse / baseline_mse - 1.0
    unlocalized = evaluate(world["unlocalized_model"], world["clean_test"],
                           cfg.m).mse / baseline_mse - 1.0
    ok = unlocalized >= localized
    report("5 (localization reduces clean damage)", ok,
           f"clean-MSE inflation without shell {unlocalized * 100:+.2f}% >= "
           f"with shell {localized * 100:+.2f}%")
    assert ok


def test_criterion_6_defense_detection(cfg, world, defense_run):
    run, elapsed = defense_run
    rep = run.report
    region = BackdoorRegion(cfg.attack_config())
    pts = np.array([m.point for m in run.maximizers])
    n_core = int(region.core_contains(pts).sum())

    flagged_ids = {id(p) for p in rep.flagged}
    unflagged_counts = [p.proximal_count for p in rep.profiles
                        if id(p) not in flagged_ids]
    flagged_counts = [p.proximal_count for p in rep.flagged]
    med_unflagged = float(np.median(unflagged_counts)) if unflagged_counts \
        else 0.0
    count_ratio_ok = bool(flagged_counts) and (
        min(flagged_counts) >= 10 * max(med_unflagged, 1e-12))

    mis_total = int((world["poisoned_train_set"].provenance
                     == ATTACK_MISLABELED).sum())
    mis_caught = rep.provenance["by_provenance"].get(ATTACK_MISLABELED, 0)
    fpr = rep.provenance["false_positive_rate"]

    ok = (n_core >= 1 and count_ratio_ok and mis_caught >= 0.6 * mis_total
          and fpr < 0.005 and elapsed < 1200)
    report("6 (defense detection)", ok,
           f"{len(rep.profiles)} maximizers ({n_core} in core), "
           f"{len(rep.flagged)} flagged with counts >= "
           f"{min(flagged_counts) if flagged_counts else 0} vs unflagged "
           f"median {med_unflagged:.1f}, mislabeled caught "
           f"{mis_caught}/{mis_total}, fpr {fpr:.5f} (tol < 0.005), "
           f"runtime {elapsed:.0f}s")
    assert n_core >= 1, "no deduplicated maximizer inside the backdoor core"
    assert count_ratio_ok, (
        f"flagged counts {flagged_counts} vs unflagged median "
        f"{med_unflagged}")
    assert mis_caught >= 0.6 * mis_total
    assert fpr < 0.005
    assert elapsed < 1200


def test_criterion_7_defense_repair(cfg, world, defense_run):
    run, _ = defense_run
    best = run.best_alpha
    with_rm = {a: attack for a, _, attack in run.sweep_with_removal}
    without_rm = {a: attack for a, _, attack in run.sweep_without_removal}
    attack_mse_with = with_rm[best].mse
    attack_mse_without = without_rm[best].mse
    reduction = 1.0 - attack_mse_with / attack_mse_without

    pre_band = evaluate(world["poisoned_model"], world["attack_test"],
                        cfg.m).success_band
    post_band = with_rm[best].success_band
    ok = reduction >= 0.30 and post_band < 0.5 * pre_band
    report("7 (defense repair)", ok,
           f"best alpha {best}: attack MSE {attack_mse_without:.5f} -> "
           f"{attack_mse_with:.5f} ({reduction * 100:+.0f}%, need >= 30%), "
           f"success band {pre_band:.4f} -> {post_band:.4f} "
           f"(need < half)")
    assert reduction >= 0.30, (
        f"removal reduced attack MSE by only {reduction * 100:.0f}%")
    assert post_band < 0.5 * pre_band


def test_criterion_8_property_suites(cfg, tmp_path):
    rng = np.random.default_rng(ACCEPT_SEED + 2)
    checks = []

    # Normalization round trip.
    raw = denormalize(sample_valid(rng, 200))
    back = denormalize(normalize(raw))
    checks.append(("round-trip", np.allclose(back, raw, rtol=1e-12)))

    # Region disjointness.
    from poisonlab.attack import sample_core, sample_shell
    atk = cfg.attack_config()
    region = BackdoorRegion(atk)
    core = sample_core(atk, rng, 500)
    shell = sample_shell(atk, rng, 500)
    checks.append(("region-disjoint",
                   not np.any(region.shell_contains(core))
                   and not np.any(region.core_contains(shell))))

    # Label law by oracle replay.
    from poisonlab.attack import build_attack_sets
    poison, _ = build_attack_sets(atk, label_oracle, rng, n_attack_test=0)
    replay = label_oracle(poison.points)
    mis = poison.provenance == ATTACK_MISLABELED
    law = (np.allclose(poison.labels[mis], atk.m * replay[mis], rtol=1e-12)
           and np.array_equal(poison.labels[~mis], replay[~mis]))
    checks.append(("label-law", law))

    # Brute-force proximity equivalence.
    from poisonlab.defense import ProximityIndex
    data = Dataset.build(sample_valid(rng, 400),
                         np.zeros(400), "clean-base")
    index = ProximityIndex(data)
    agree = all(count_proximal(q, data, 0.12) == index.count(q, 0.12)
                for q in rng.random((100, 5)))
    checks.append(("proximity-equivalence", agree))

    # Dedup postcondition.
    from poisonlab.search import LocalMaximizer
    ms = [LocalMaximizer(tuple(p), 0.0, 0.0, float(e), float(e * e),
                         "s", 1, 12)
          for p, e in zip(rng.random((60, 5)), rng.random(60))]
    kept = dedup(ms, 0.2)
    pts = np.array([m.point for m in kept])
    sep = all(np.max(np.abs(pts[i] - pts[j])) > 0.2
              for i in range(len(pts)) for j in range(i + 1, len(pts)))
    checks.append(("dedup-separation", sep))

    # Ascent monotonicity.
    model = init_model((5, 16, 8, 1), ACCEPT_SEED)
    trace = []
    ascend(model, label_oracle, sample_valid(rng), AscentConfig(max_iters=40),
           trace=trace)
    checks.append(("ascent-monotone", bool(np.all(np.diff(trace) >= 0))))

    # Full-run determinism: byte-identical CSVs for a fixed seed.
    from poisonlab.cli import main as cli_main
    tiny = ExperimentConfig(base_size=300, test_size=60, attack_test_size=60,
                            widths=(5, 8, 1), max_epochs=20, n_attack=20,
                            n_clean=40, seed=ACCEPT_SEED)
    cfg_path = tmp_path / "tiny.cfg"
    tiny.to_file(cfg_path)
    blobs = []
    for run_dir in ("d1", "d2"):
        out = tmp_path / run_dir
        assert cli_main(["generate", "--config", str(cfg_path),
                         "--out", str(out)]) == 0
        assert cli_main(["attack", "--config", str(cfg_path),
                         "--out", str(out)]) == 0
        blobs.append(b"".join((out / n).read_bytes() for n in
                              ("base_train.csv", "clean_test.csv",
                               "poison_train.csv", "attack_test.csv")))
    checks.append(("csv-determinism", blobs[0] == blobs[1]))

    failed = [name for name, ok in checks if not ok]
    report("8 (property suites)", not failed,
           f"{len(checks) - len(failed)}/{len(checks)} properties hold"
           + (f"; failed: {failed}" if failed else ""))
    assert not failed
