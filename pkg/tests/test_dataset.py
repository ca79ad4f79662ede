from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from stiffnet.dataset import (
    PairSet,
    ScalerParams,
    apply_scaler,
    balance_by_replication,
    build_pairs,
    classify_fuel,
    fit_scaler,
    invert_scaler,
    split_validation,
)
from stiffnet.errors import DomainError, EmptyDatasetError
from stiffnet.integrator import Trajectory


def scalar_traj(values, dt):
    return Trajectory.from_vectors(np.asarray(values, dtype=float), dt)


def pair_set(n, seed, channels=2, dt=0.1):
    rng = np.random.default_rng(seed)
    U = rng.uniform(0.5, 2.0, (n + 1, channels))
    return PairSet(*build_pairs(Trajectory.from_vectors(U, dt), "solution"), {"set_id": seed})


# --- scalers --------------------------------------------------------------


def test_linear_three_points():
    p = fit_scaler([1.0, 2.0, 3.0], "linear")
    np.testing.assert_allclose(apply_scaler(p, [1.0, 2.0, 3.0]), [0.0, 0.5, 1.0], atol=1e-15)
    assert p.mean == 2.0 and p.std == pytest.approx(np.sqrt(2 / 3), rel=1e-15)


def test_log_three_points():
    x = [1.0, np.e, np.e**2]
    np.testing.assert_allclose(apply_scaler(fit_scaler(x, "log"), x), [0.0, 0.5, 1.0], atol=1e-15)


def test_degenerate_channel():
    p = fit_scaler([5.0, 5.0, 5.0])
    assert p.degenerate
    assert np.array_equal(apply_scaler(p, [5.0, 5.0, 7.0]), [0.5, 0.5, 0.5])
    assert np.array_equal(invert_scaler(p, [0.0, 0.5, 1.0]), [5.0, 5.0, 5.0])
    q = fit_scaler([2.0, 2.0], "log")
    assert invert_scaler(q, [0.3]) == pytest.approx(2.0, rel=1e-15)


@pytest.mark.parametrize("mode", ["linear", "log"])
def test_round_trip_random(mode):
    rng = np.random.default_rng(11)
    # affine scaling through [0, 1] resolves about eps * range, so linear
    # mode gets one decade while log mode spans six
    x = rng.uniform(1.0, 10.0, 1000) if mode == "linear" else 10.0 ** rng.uniform(-3, 3, 1000)
    p = fit_scaler(x, mode)
    back = invert_scaler(p, apply_scaler(p, x))
    assert np.max(np.abs(back - x) / x) <= 1e-12


def test_extrema_map_to_unit_interval_without_clamping():
    x = np.array([3.0, -1.0, 4.0, 1.5])
    p = fit_scaler(x)
    assert apply_scaler(p, -1.0) == 0.0
    assert apply_scaler(p, 4.0) == pytest.approx(1.0, abs=1e-15)
    assert apply_scaler(p, 9.0) > 1.0 and apply_scaler(p, -6.0) < 0.0


def test_log_mode_domain():
    with pytest.raises(DomainError):
        fit_scaler([1.0, 0.0, 2.0], "log")
    with pytest.raises(DomainError):
        apply_scaler(fit_scaler([1.0, 2.0], "log"), [-1.0])
    with pytest.raises(EmptyDatasetError):
        fit_scaler([], "linear")


def test_scaler_dict_round_trip():
    p = fit_scaler([0.1, 0.7, 1.3], "log")
    assert ScalerParams.from_dict(p.to_dict()) == p


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(2, 60), elements=st.floats(-1e6, 1e6)))
def test_two_stage_equals_min_max(x):
    lo, hi = x.min(), x.max()
    p = fit_scaler(x)
    if p.degenerate:
        assert hi - lo < 1e-300
        return
    direct = (x - lo) / (hi - lo)
    np.testing.assert_allclose(apply_scaler(p, x), direct, rtol=0, atol=1e-12)


# --- pairs ----------------------------------------------------------------


def test_build_pairs_scalar_toy():
    t = scalar_traj([1.0, 0.9], 0.1)
    X, Y = build_pairs(t, "derivative", 0.1)
    assert X.tolist() == [[1.0, 0.1]] and Y[0, 0] == pytest.approx(-1.0, rel=1e-14)
    X, Y = build_pairs(t, "solution", 0.1)
    assert Y.tolist() == [[0.9]]


def test_build_pairs_needs_two_states():
    with pytest.raises(EmptyDatasetError):
        build_pairs(SimpleNamespace(values=np.ones((1, 2)), sample_dt=0.1), "solution")


def test_build_pairs_rejects_wrong_dt():
    with pytest.raises(ValueError):
        build_pairs(scalar_traj([1.0, 0.9, 0.8], 0.1), "solution", 0.2)


def test_derivative_targets_reconstruct_trajectory():
    rng = np.random.default_rng(2)
    U = rng.normal(size=(40, 3))
    t = Trajectory.from_vectors(U, 1e-7)
    X, Y = build_pairs(t, "derivative")
    assert X.shape == (39, 4) and Y.shape == (39, 3)
    np.testing.assert_allclose(X[:, :-1] + 1e-7 * Y, U[1:], rtol=1e-12, atol=1e-12)


# --- grouping -------------------------------------------------------------


@pytest.mark.parametrize("phi, group", [(0.1, "lean"), (0.01, "lean"), (0.1000001, "balanced"), (1.0, "balanced"), (2.0, "balanced"), (2.0000001, "rich"), (5.0, "rich")])
def test_classify_fuel(phi, group):
    assert classify_fuel(phi) == group


def test_classify_fuel_domain():
    for bad in (0.0, -1.0):
        with pytest.raises(DomainError):
            classify_fuel(bad)


@given(st.floats(1e-9, 1e9))
def test_classify_fuel_partitions(phi):
    assert classify_fuel(phi) in ("lean", "balanced", "rich")
    assert (phi <= 0.1) + (0.1 < phi <= 2) + (phi > 2) == 1


# --- balancing ------------------------------------------------------------


def test_replication_sizes():
    big, small = pair_set(8000, 1), pair_set(999, 2)
    ds = balance_by_replication([big, small], [1, 8], "solution")
    assert len(ds) == 15992
    assert ds.sets[1]["multiplicity"] == 8


def test_plain_concatenation():
    a, b = pair_set(10, 1), pair_set(7, 2)
    ds = balance_by_replication([a, b], approach="solution")
    assert np.array_equal(ds.inputs, np.vstack([a.inputs, b.inputs]))
    assert ds.sources[:, 0].tolist() == [0] * 10 + [1] * 7


def test_single_set_replication_keeps_scalers():
    a = pair_set(25, 3)
    one = balance_by_replication([a], [1], "solution")
    two = balance_by_replication([a], [2], "solution")
    assert len(two) == 2 * len(one)
    for s1, s2 in zip(one.input_scalers + one.target_scalers, two.input_scalers + two.target_scalers):
        assert s1.mode == s2.mode and s1.z_min == pytest.approx(s2.z_min, rel=1e-13)
        assert s1.mean == pytest.approx(s2.mean, rel=1e-13) and s1.std == pytest.approx(s2.std, rel=1e-13)
        assert s1.z_max == pytest.approx(s2.z_max, rel=1e-13)


def test_scaled_training_data_in_unit_interval():
    ds = balance_by_replication([pair_set(30, 1), pair_set(20, 2)], [1, 3], "solution")
    for A in (ds.scaled_inputs, ds.scaled_targets):
        assert A.min() >= -1e-15 and A.max() <= 1 + 1e-15
    # dt is constant and therefore a degenerate channel at 0.5
    assert np.all(ds.scaled_inputs[:, -1] == 0.5)


@pytest.mark.parametrize("mult", [[0, 1], [1.5, 1], [1]])
def test_bad_multiplicities(mult):
    with pytest.raises(ValueError):
        balance_by_replication([pair_set(5, 1), pair_set(5, 2)], mult, "solution")


# --- validation split -----------------------------------------------------


def test_split_sizes_and_disjointness():
    ds = balance_by_replication([pair_set(100, 4)], approach="solution")
    tr, va = split_validation(ds, 0.2, seed=7)
    assert (len(tr), len(va)) == (80, 20)
    rows_t = {tuple(r) for r in tr.sources}
    rows_v = {tuple(r) for r in va.sources}
    assert not rows_t & rows_v and len(rows_t | rows_v) == 100
    assert tr.input_scalers == ds.input_scalers and va.target_scalers == ds.target_scalers


def test_split_deterministic_and_seed_dependent():
    ds = balance_by_replication([pair_set(100, 4)], approach="solution")
    first = split_validation(ds, 0.2, seed=3)[1].sources
    assert np.array_equal(first, split_validation(ds, 0.2, seed=3)[1].sources)
    splits = {tuple(split_validation(ds, 0.2, seed=s)[1].sources[:, 1]) for s in range(10)}
    assert len(splits) == 10


@pytest.mark.parametrize("fraction", [0.0, 1.0, 0.001])
def test_split_rejects_empty(fraction):
    ds = balance_by_replication([pair_set(20, 4)], approach="solution")
    with pytest.raises((ValueError, EmptyDatasetError)):
        split_validation(ds, fraction)
