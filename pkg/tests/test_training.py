import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sindy_ekf import scenarios as S
from sindy_ekf.library import build_polynomial_library
from sindy_ekf.training import (SingularRegressionError, SnapshotSet, StlsqSettings,
                                assemble_regression, compress_regression,
                                differentiate_snapshots, read_snapshot_csv, stlsq,
                                write_snapshot_csv)


def _ridge_normal_equations(theta, y, delta):
    return np.linalg.solve(theta.T @ theta + delta * np.eye(theta.shape[1]), theta.T @ y)


def test_zero_threshold_gives_plain_ridge(rng):
    theta = rng.normal(size=(50, 6))
    y = rng.normal(size=(50, 2))
    xi = stlsq(theta, y, StlsqSettings(ridge_strength=0.3, threshold=0.0))
    np.testing.assert_allclose(xi, _ridge_normal_equations(theta, y, 0.3), rtol=1e-10)


def test_zero_ridge_is_least_squares(rng):
    theta = rng.normal(size=(40, 5))
    y = rng.normal(size=40)
    xi = stlsq(theta, y, StlsqSettings(ridge_strength=0.0, threshold=0.0))
    np.testing.assert_allclose(xi[:, 0], np.linalg.lstsq(theta, y, rcond=None)[0], rtol=1e-12)


def test_thresholding_refits_on_support(rng):
    theta = rng.normal(size=(200, 4))
    true = np.array([2.0, 0.0, -1.5, 0.0])
    y = theta @ true + 0.01 * rng.normal(size=200)
    hist = []
    xi = stlsq(theta, y, StlsqSettings(ridge_strength=1e-3, threshold=0.1), history=hist)
    support = np.array([True, False, True, False])
    np.testing.assert_array_equal(xi[:, 0] != 0, support)
    refit = _ridge_normal_equations(theta[:, support], y, 1e-3)
    np.testing.assert_allclose(xi[support, 0], refit, rtol=1e-12)
    # supports only ever shrink
    for a, b in zip(hist, hist[1:]):
        assert not np.any(b & ~a)


def test_everything_thresholded_gives_zero_column(rng):
    theta = rng.normal(size=(30, 3))
    xi = stlsq(theta, 1e-3 * rng.normal(size=30), StlsqSettings(0.0, threshold=10.0))
    np.testing.assert_array_equal(xi, 0.0)


def test_rank_deficient_raises():
    theta = np.ones((10, 2))
    with pytest.raises(SingularRegressionError):
        stlsq(theta, np.arange(10.0), StlsqSettings(ridge_strength=0.0, threshold=0.0))


def test_settings_validation():
    with pytest.raises(ValueError):
        StlsqSettings(ridge_strength=-1)
    with pytest.raises(ValueError):
        StlsqSettings(threshold=-1)
    with pytest.raises(ValueError):
        StlsqSettings(max_iterations=0)


def test_fewer_rows_than_terms_warns():
    lib = build_polynomial_library(2, 3)
    data = SnapshotSet(np.arange(3.0), np.ones((3, 2)), np.ones((3, 2)))
    with pytest.warns(UserWarning, match="snapshots"):
        assemble_regression(lib, data)


def test_lotka_volterra_support_is_recovered(lv):
    model = S.train(lv)
    ref = lv.reference_xi()
    np.testing.assert_array_equal(model.xi != 0, ref != 0)
    np.testing.assert_allclose(model.xi[ref != 0], ref[ref != 0], rtol=1e-3)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_compressed_regression_gives_identical_fit(seed, n_sets):
    gen = np.random.default_rng(seed)
    lib = build_polynomial_library(2, 2)
    sets = []
    for _ in range(n_sets):
        T = int(gen.integers(5, 40))
        x = gen.normal(size=(T, 2))
        sets.append(SnapshotSet(np.arange(T, dtype=float), x, gen.normal(size=(T, 2))))
    settings_ = StlsqSettings(ridge_strength=float(gen.uniform(0, 0.5)),
                              threshold=float(gen.uniform(0, 0.3)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        full = stlsq(*assemble_regression(lib, sets), settings_)
        small = stlsq(*compress_regression(lib, sets), settings_)
    np.testing.assert_allclose(small, full, rtol=1e-8, atol=1e-10)


def test_differentiation_exact_for_quadratics():
    t = np.linspace(0.0, 2.0, 11)
    x = np.column_stack([3 * t ** 2 - t, 0.5 * t])
    np.testing.assert_allclose(differentiate_snapshots(t, x),
                               np.column_stack([6 * t - 1, 0.5 * np.ones_like(t)]), atol=1e-12)


def test_differentiation_is_second_order():
    errs = []
    for n in (101, 201):
        t = np.linspace(0, 1, n)
        d = differentiate_snapshots(t, np.sin(3 * t)[:, None])[:, 0]
        errs.append(np.max(np.abs(d - 3 * np.cos(3 * t))))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_differentiation_validates_input():
    with pytest.raises(ValueError):
        differentiate_snapshots([0.0, 1.0], np.zeros((2, 1)))
    with pytest.raises(ValueError):
        differentiate_snapshots([0.0, 2.0, 1.0], np.zeros((3, 1)))


def test_snapshot_csv_round_trip(tmp_path, rng):
    t = np.linspace(0, 1, 7)
    data = SnapshotSet(t, rng.normal(size=(7, 2)), rng.normal(size=(7, 2)))
    path = tmp_path / "snap.csv"
    write_snapshot_csv(path, data)
    back = read_snapshot_csv(path, 2)
    np.testing.assert_array_equal(back.states, data.states)
    np.testing.assert_array_equal(back.derivatives, data.derivatives)


def test_snapshot_csv_without_derivatives(tmp_path):
    t = np.linspace(0, 1, 21)
    path = tmp_path / "states.csv"
    np.savetxt(path, np.column_stack([t, t ** 2]), delimiter=",", header="t,x1", comments="")
    back = read_snapshot_csv(path, 1)
    np.testing.assert_allclose(back.derivatives[:, 0], 2 * t, atol=1e-12)


def test_snapshot_csv_errors(tmp_path):
    with pytest.raises(FileNotFoundError, match="missing.csv"):
        read_snapshot_csv(tmp_path / "missing.csv")
    bad = tmp_path / "bad.csv"
    bad.write_text("t,a,b,c\n0,1,2,3\n1,1,2,3\n2,1,2,3\n")
    with pytest.raises(ValueError, match="columns"):
        read_snapshot_csv(bad, 2)


def test_snapshot_shape_validation():
    with pytest.raises(ValueError):
        SnapshotSet(np.arange(3.0), np.zeros((3, 2)), np.zeros((3, 1)))
    with pytest.raises(ValueError):
        SnapshotSet(np.arange(4.0), np.zeros((3, 2)), np.zeros((3, 2)))


def test_single_snapshot_row():
    lib = build_polynomial_library(2, 1)
    data = SnapshotSet(np.array([0.0]), np.array([[2.0, 3.0]]), np.zeros((1, 2)))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        theta, _ = assemble_regression(lib, data)
    np.testing.assert_array_equal(theta, [[1.0, 2.0, 3.0]])


def test_regression_matrix_reproduces_generating_model(lv):
    data = S.simulate_training(lv)
    theta, xdot = assemble_regression(lv.library, data)
    np.testing.assert_allclose(theta @ lv.reference_xi(), xdot, rtol=1e-12, atol=1e-12)
    # column of term x1 is the x1 trajectory
    np.testing.assert_array_equal(theta[:len(data[0]), 1], data[0].states[:, 0])


def test_zero_derivatives_give_zero_model(rng):
    theta = rng.normal(size=(30, 5))
    np.testing.assert_array_equal(stlsq(theta, np.zeros((30, 2)), StlsqSettings(0.05, 1e-3)), 0.0)


def test_differentiation_of_ramp_and_sine():
    t = np.linspace(0.0, 3.0, 31)
    np.testing.assert_allclose(differentiate_snapshots(t, 2 * t[:, None]), 2.0, atol=1e-13)
    t = np.arange(0.0, 2 * np.pi, 1e-3)
    d = differentiate_snapshots(t, np.sin(t)[:, None])[:, 0]
    assert np.max(np.abs(d - np.cos(t))) < 1e-6


def test_selkov_offline_fit_gains_spurious_cross_term(selkov):
    values = selkov.parameter_values(S.train(selkov).xi)
    # the true system has no x1 x2 term in f1; the sparse fit picks up a negative one
    assert -0.1 < values["iota"] < -0.03
    assert values["rho"] == pytest.approx(0.92, abs=0.01)
    assert values["theta1"] == pytest.approx(-0.93, abs=0.05)
