import warnings

import numpy as np
import pytest

from fedsim import baselines
from fedsim.exceptions import ConfigError, ProtocolError
from fedsim.verify import grid_geomed


def test_fedavg_mean_and_empty():
    np.testing.assert_allclose(baselines.fedavg_aggregate([np.ones(2), 3 * np.ones(2)]), [2.0, 2.0])
    with pytest.raises(ProtocolError):
        baselines.fedavg_aggregate([])


def test_fedprox_step_example():
    out = baselines.fedprox_local_step([1.0, 0.0], [0.0, 0.0], [0.0, 0.0], 0.1, 0.2)
    np.testing.assert_allclose(out - np.array([1.0, 0.0]), [-0.02, 0.0])


def test_fedprox_mu0_is_sgd():
    out = baselines.fedprox_local_step([1.0, 2.0], [5.0, 5.0], [1.0, -1.0], 0.1, 0.0)
    np.testing.assert_allclose(out, [0.9, 2.1])


def test_scaffold_controls_divide_by_M():
    st = baselines.ScaffoldState(n_workers=4, dim=2)
    baselines.scaffold_update_controls(st, [0, 2], [np.array([1.0, 0.0]), np.array([3.0, 2.0])])
    np.testing.assert_allclose(st.h, [1.0, 0.5])
    np.testing.assert_allclose(st.h_m[2], [3.0, 2.0])
    np.testing.assert_allclose(st.h_m[1], [0.0, 0.0])
    # second refresh of worker 0 only adds the change
    baselines.scaffold_update_controls(st, [0], [np.array([5.0, 0.0])])
    np.testing.assert_allclose(st.h, [2.0, 0.5])


def test_scaffold_step():
    out = baselines.scaffold_local_step([0.0], [1.0], [0.5], [2.0], 0.1)
    np.testing.assert_allclose(out, [-0.25])


def test_fedexp_example():
    eta_g, delta = baselines.fedexp_step([np.array([1.0, 0.0]), np.array([-1.0, 0.0])], 0.001)
    assert eta_g == pytest.approx(500.0)
    np.testing.assert_allclose(delta, [0.0, 0.0])


def test_fedexp_never_below_one():
    g = np.array([1.0, 1.0])
    eta_g, delta = baselines.fedexp_step([g, g], 0.001)
    assert eta_g == 1.0
    np.testing.assert_allclose(delta, g)
    with pytest.raises(ConfigError):
        baselines.fedexp_step([g], 0.0)


def test_fedacg_round_momentum():
    st = baselines.FedAcgState(dim=2, beta=0.2, lam=0.5)
    seen = []

    def train(anchor):
        seen.append(anchor.copy())
        return [np.array([1.0, 0.0]), np.array([0.0, 1.0])]

    theta, _ = baselines.fedacg_round(st, np.zeros(2), train)
    np.testing.assert_allclose(theta, [0.5, 0.5])
    theta, _ = baselines.fedacg_round(st, theta, train)
    np.testing.assert_allclose(seen[1], [0.75, 0.75])
    np.testing.assert_allclose(st.momentum, [0.75, 0.75])
    np.testing.assert_allclose(theta, [1.25, 1.25])


def test_fedacg_local_step_penalty():
    out = baselines.fedacg_local_step([1.0], [0.0], [0.0], 0.5, 0.2)
    np.testing.assert_allclose(out, [0.9])


def test_fltrust_example():
    np.testing.assert_allclose(baselines.fltrust_modify([1.0, 1.0], [1.0, 0.0]), [1.0, 0.0])
    np.testing.assert_allclose(baselines.fltrust_modify([-1.0, 0.5], [1.0, 0.0]), [0.0, 0.0])
    np.testing.assert_allclose(baselines.fltrust_modify([1.0, 1.0], [0.0, 0.0]), [0.0, 0.0])


def test_fltrust_aggregate_divides_by_S():
    ups = [np.array([2.0, 0.0]), np.array([-1.0, 0.0])]
    np.testing.assert_allclose(baselines.fltrust_aggregate(ups, np.array([1.0, 0.0])), [1.0, 0.0])


def test_weiszfeld_square_center():
    P = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    res = baselines.weiszfeld(P)
    np.testing.assert_allclose(res.point, [0.5, 0.5], atol=1e-9)
    assert res.converged


def test_weiszfeld_matches_grid_oracle():
    P = np.random.default_rng(4).normal(size=(7, 2))
    res = baselines.weiszfeld(P, tol=1e-12)
    _, obj = grid_geomed(P)
    assert abs(baselines.geomed_objective(P, res.point) - obj) <= 1e-3


def test_weiszfeld_resists_outlier():
    P = np.array([[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [0.1, 0.1], [1e6, 1e6]])
    y = baselines.weiszfeld_geomed(P)
    assert np.linalg.norm(y - 0.05) < 0.2


def test_weiszfeld_translation_equivariant():
    P = np.random.default_rng(2).normal(size=(6, 3))
    shift = np.array([10.0, -4.0, 2.5])
    a = baselines.weiszfeld_geomed(P)
    b = baselines.weiszfeld_geomed(P + shift)
    np.testing.assert_allclose(b - shift, a, atol=1e-7)


def test_weiszfeld_on_data_point_stays_finite():
    P = np.array([[0.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]])
    y = baselines.weiszfeld_geomed(P)
    assert np.all(np.isfinite(y))
    np.testing.assert_allclose(y, [0.0, 0.0], atol=1e-6)


def test_weiszfeld_warns_when_not_converged():
    P = np.random.default_rng(0).normal(size=(5, 2))
    with pytest.warns(baselines.GeoMedWarning):
        baselines.weiszfeld_geomed(P, tol=1e-300, max_iter=3)


def test_weiszfeld_single_point_and_empty():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        np.testing.assert_allclose(baselines.weiszfeld_geomed([np.array([2.0, 3.0])]), [2.0, 3.0])
    with pytest.raises(ProtocolError):
        baselines.weiszfeld([])


def test_rfa_and_raga_agree_up_to_shift():
    theta = np.array([1.0, -2.0])
    ups = [np.random.default_rng(i).normal(size=2) for i in range(5)]
    rfa = baselines.rfa_aggregate([theta + g for g in ups])
    raga = baselines.raga_aggregate(ups)
    np.testing.assert_allclose(rfa - theta, raga, atol=1e-8)
