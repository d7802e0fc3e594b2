"""Backdoor construction: region geometry, label law, flood generation."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import chisquare

from poisonlab.attack import (AttackConfig, BackdoorRegion,
                              build_attack_sets, generate_clean_flood,
                              sample_core, sample_shell)
from poisonlab.features import (ATTACK_LOCALIZING, ATTACK_MISLABELED,
                                CLEAN_FLOOD, is_valid, label_oracle)

TABLE_CFG = AttackConfig(m=1.5, center_t=0.5, center_v=0.2, center_r=0.5,
                         width_t=0.1, width_v=0.1, width_r=0.1,
                         n_attack=50, n_clean=100)


def test_config_validation():
    with pytest.raises(ValueError):
        AttackConfig(m=1.05)
    with pytest.raises(ValueError):
        AttackConfig(center_v=0.05, width_v=0.1)  # shell leaves the cube
    with pytest.raises(ValueError):
        AttackConfig(width_t=0.0)
    with pytest.raises(ValueError):
        AttackConfig(n_attack=-1)


def test_core_draws_satisfy_all_constraints():
    rng = np.random.default_rng(0)
    pts = sample_core(TABLE_CFG, rng, 10_000)
    b, k, t, v, r = pts.T
    assert np.all((0.9 < b) & (b < k) & (k < 1.0))
    assert np.all((t >= 0.45) & (t <= 0.55))
    assert np.all((v >= 0.15) & (v <= 0.25))
    assert np.all((r >= 0.45) & (r <= 0.55))
    assert np.all(is_valid(pts))
    assert (b > k).sum() == 0
    region = BackdoorRegion(TABLE_CFG)
    assert np.all(region.core_contains(pts))
    assert not np.any(region.shell_contains(pts))


def test_shell_draws_disjoint_from_core():
    rng = np.random.default_rng(1)
    pts = sample_shell(TABLE_CFG, rng, 10_000)
    region = BackdoorRegion(TABLE_CFG)
    assert not np.any(region.core_contains(pts))
    assert np.all(region.shell_contains(pts))
    b, k = pts[:, 0], pts[:, 1]
    assert np.all((0.9 < b) & (b < k) & (k < 1.0))
    # Every t/v/r coordinate sits in its outer band.
    for col, (c, d) in zip(pts[:, 2:].T, TABLE_CFG.center_widths()):
        assert np.all((col >= c - d) & (col <= c + d))
        assert np.all((col < c - d / 2) | (col > c + d / 2))


def test_shell_t_marginal_uniform_on_band_union():
    # Chi-square goodness of fit at the 1% level against uniformity over
    # [t-d, t-d/2] u [t+d/2, t+d].
    rng = np.random.default_rng(2)
    t = sample_shell(TABLE_CFG, rng, 10_000)[:, 2]
    lo_band = t[t < 0.45]
    hi_band = t[t > 0.55]
    counts = np.concatenate([
        np.histogram(lo_band, bins=8, range=(0.40, 0.45))[0],
        np.histogram(hi_band, bins=8, range=(0.55, 0.60))[0],
    ])
    assert counts.sum() == t.size
    _, p_value = chisquare(counts)
    assert p_value > 0.01, f"shell t-marginal not uniform (p={p_value})"


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25, deadline=None)
def test_core_shell_disjoint_property(seed):
    rng = np.random.default_rng(seed)
    region = BackdoorRegion(TABLE_CFG)
    core = sample_core(TABLE_CFG, rng, 64)
    shell = sample_shell(TABLE_CFG, rng, 64)
    assert np.all(region.core_contains(core))
    assert not np.any(region.shell_contains(core))
    assert np.all(region.shell_contains(shell))
    assert not np.any(region.core_contains(shell))


def test_attack_sets_label_law():
    rng = np.random.default_rng(3)
    poison, attack_test = build_attack_sets(TABLE_CFG, label_oracle, rng,
                                            n_attack_test=200)
    assert len(poison) == TABLE_CFG.n_attack + TABLE_CFG.n_clean
    mis = poison.provenance == ATTACK_MISLABELED
    loc = poison.provenance == ATTACK_LOCALIZING
    assert mis.sum() == TABLE_CFG.n_attack
    assert loc.sum() == TABLE_CFG.n_clean

    replay = label_oracle(poison.points)
    ratios = poison.labels[mis] / replay[mis]
    assert np.allclose(ratios, TABLE_CFG.m, rtol=1e-12)
    assert np.array_equal(poison.labels[loc], replay[loc])

    # Attack test carries true labels on core points.
    region = BackdoorRegion(TABLE_CFG)
    assert len(attack_test) == 200
    assert np.all(region.core_contains(attack_test.points))
    assert np.array_equal(attack_test.labels, label_oracle(attack_test.points))


def test_attack_sets_empty_counts():
    cfg = AttackConfig(n_attack=0, n_clean=0)
    poison, attack_test = build_attack_sets(cfg, label_oracle,
                                            np.random.default_rng(4),
                                            n_attack_test=10)
    assert len(poison) == 0
    assert len(attack_test) == 10


def test_poison_share_at_paper_scale():
    # 2000 mislabeled + 8000 localizing out of the 210k training set:
    # 10000/210000 = 4.76%, quoted as "only 5%".
    cfg = AttackConfig(n_attack=2000, n_clean=8000)
    total = cfg.n_attack + cfg.n_clean
    assert total / (200_000 + total) == pytest.approx(0.05, abs=0.005)


def test_clean_flood_in_region_with_true_labels():
    rng = np.random.default_rng(5)
    flood = generate_clean_flood(TABLE_CFG, 300, label_oracle, rng)
    assert len(flood) == 300
    assert set(flood.provenance) == {CLEAN_FLOOD}
    region = BackdoorRegion(TABLE_CFG)
    assert np.all(region.core_contains(flood.points))
    assert np.array_equal(flood.labels, label_oracle(flood.points))


def test_sampling_deterministic_per_seed():
    a = sample_core(TABLE_CFG, np.random.default_rng(6), 100)
    b = sample_core(TABLE_CFG, np.random.default_rng(6), 100)
    assert np.array_equal(a, b)
    single = sample_core(TABLE_CFG, np.random.default_rng(7))
    assert single.shape == (5,)
