import math

import numpy as np
import pytest

from fedsim import attacks, tasks
from fedsim.exceptions import ConfigError


def test_n_malicious_rounding():
    assert attacks.n_malicious(40, 0.3) == 12
    assert attacks.n_malicious(40, 0.6) == 24
    assert attacks.n_malicious(40, 0.0) == 0
    assert attacks.n_malicious(10, 0.25) == 3


def test_assign_malicious_size_and_determinism():
    a = attacks.assign_malicious(40, 0.3, 5)
    assert len(a) == 12 and all(0 <= m < 40 for m in a)
    assert a == attacks.assign_malicious(40, 0.3, 5)
    with pytest.raises(ConfigError):
        attacks.assign_malicious(40, 1.5, 0)


def test_sign_flip():
    np.testing.assert_array_equal(attacks.sign_flip([1.0, -2.0]), [-1.0, 2.0])


def test_noise_scale_moments():
    rng = np.random.default_rng(0)
    draws = np.array([attacks.draw_noise_scale(rng, math.sqrt(3.0)) for _ in range(40000)])
    assert abs(draws.mean()) < 0.03
    assert draws.var() == pytest.approx(3.0, rel=0.03)


def test_noise_inject_scales_whole_vector():
    g = np.array([1.0, 2.0, -1.0])
    out = attacks.noise_inject(g, np.random.default_rng(1))
    ratio = out / g
    np.testing.assert_allclose(ratio, ratio[0])


def test_label_flip_counts_and_mapping():
    n, L = 1000, 10
    y = np.arange(n) % L
    ds = tasks.LabeledDataset(np.zeros((n, 1)), y, L)
    out = attacks.label_flip(ds, 0.5, np.random.default_rng(0))
    changed = out.labels != ds.labels
    # labels 4.5 would map onto themselves; with L even every flip changes the label
    assert changed.sum() == 500
    np.testing.assert_array_equal(out.labels[changed], L - ds.labels[changed] - 1)


def test_label_flip_rejects_bad_fraction():
    ds = tasks.LabeledDataset(np.zeros((2, 1)), np.array([0, 1]), 2)
    with pytest.raises(ConfigError):
        attacks.label_flip(ds, 1.5, np.random.default_rng(0))


def test_attack_plan_intensity():
    plan = attacks.AttackPlan(frozenset({1, 3}), attacks.AttackKind.SIGN_FLIP, 0.5)
    assert plan.intensity([0, 1, 2, 3]) == 0.5
    assert plan.is_malicious(3) and not plan.is_malicious(0)
    none = attacks.AttackPlan(frozenset({1}), attacks.AttackKind.NONE, 0.0)
    assert none.intensity([1]) == 0.0 and not none.is_malicious(1)


def test_attack_kind_aliases():
    assert attacks.AttackKind.parse("sign-flip") is attacks.AttackKind.SIGN_FLIP
    with pytest.raises(ConfigError):
        attacks.AttackKind.parse("bogus")
