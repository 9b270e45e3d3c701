import math

import numpy as np
import pytest

from ricci_lab import (
    Constant,
    F_k,
    FlowState,
    conjugate_f_solve,
    coupled_series,
    einstein_residual,
    integrate,
    lowest_eigenpair,
    monitor,
    monitor_frame,
    rhs_f_variation,
    rhs_lambda,
    rhs_rescaled_F,
    rhs_w_bar,
    rhs_w_variation,
    soliton_residual,
    w_bar_k,
    w_k,
    weighted_mass,
)
from ricci_lab.export import run_columns
from ricci_lab.functionals import F_k_forms, ricci_clock
from ricci_lab.geometry import smooth_random_field


def test_flat_torus_with_constant_weight(flat_torus):
    f = np.zeros(flat_torus.shape)
    assert F_k(flat_torus, f, 3.0) == 0.0
    form_a, form_b = rhs_rescaled_F(flat_torus, f, 3.0, -1.0)
    assert form_a == pytest.approx(0.0, abs=1e-12)
    assert form_b == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("k", [1.0, 2.0, 5.0])
def test_sphere_functionals(sphere, sphere_weight, k):
    assert F_k(sphere, sphere_weight, k) == pytest.approx(2.0 * k)
    assert rhs_f_variation(sphere, sphere_weight, k) == pytest.approx(4.0 * k)
    form_a, form_b = rhs_rescaled_F(sphere, sphere_weight, k, -1.0)
    assert form_a == pytest.approx(6.0 * k)
    assert form_b == pytest.approx(6.0 * k)
    tau = 0.5
    assert w_k(sphere, sphere_weight, tau, k) == pytest.approx(tau**2 * k * (2.0 + 1.0 / tau))


def test_gradient_and_laplacian_forms_agree(wavy_torus, rng):
    f = smooth_random_field(wavy_torus, rng)
    grad, lap = F_k_forms(wavy_torus, f, 2.0)
    assert grad == pytest.approx(lap, rel=1e-9)
    assert F_k(wavy_torus, f, 2.0) == grad


def test_lambda_derivative_vanishes_on_einstein_sphere(sphere):
    for k in (1.0, 3.0):
        result = lowest_eigenpair(sphere, k)
        assert rhs_lambda(sphere, result, k, 2.0) == pytest.approx(0.0, abs=1e-12)
        assert rhs_lambda(sphere, result, k, 0.0) > 0


def test_einstein_and_soliton_residuals(sphere, sphere_weight, wavy_torus):
    assert einstein_residual(sphere, 2.0) == pytest.approx(0.0, abs=1e-14)
    assert einstein_residual(sphere, 0.0) == pytest.approx(2.0)
    assert soliton_residual(sphere, sphere_weight, 2.0) == pytest.approx(0.0, abs=1e-14)
    assert einstein_residual(wavy_torus, 0.0) > 0


def test_w_bar_on_flat_torus():
    for t_bar in (0.0, 0.3, 1.0):
        assert w_bar_k(0.0, -1.0, t_bar, 1.0, 2) == pytest.approx(math.exp(t_bar))
    assert w_bar_k(1.0, -1.0, 0.0, 2.0, 2, mass=0.5) == pytest.approx(2.0)


def test_tau_must_be_positive(sphere, sphere_weight):
    with pytest.raises(ValueError):
        w_k(sphere, sphere_weight, 0.0, 1.0)
    with pytest.raises(ValueError):
        rhs_w_variation(sphere, sphere_weight, -1.0, 1.0)


def test_w_bar_rate_is_non_negative(wavy_torus, rng):
    f = smooth_random_field(wavy_torus, rng)
    assert rhs_w_bar(wavy_torus, f, -1.0, 0.2, 2.0) >= 0
    assert rhs_w_variation(wavy_torus, f, 1.5, 2.0) >= 0


def _centred(values, times):
    return (values[2:] - values[:-2]) / (times[2:] - times[:-2])


@pytest.mark.parametrize("k", [1.0, 2.0])
def test_w_rate_matches_time_difference_along_ricci_flow(wavy_torus, rng, k):
    dt = 0.5 * wavy_torus.cfl_bound()
    traj = integrate(FlowState(0.0, wavy_torus), 40 * dt, dt)
    fs = conjugate_f_solve(traj, smooth_random_field(wavy_torus, rng))
    tau = 0.5 + traj.times
    W = np.array([w_k(m, f, ta, k) for m, f, ta in zip(traj.metrics, fs, tau)])
    rhs = np.array([rhs_w_variation(traj.metrics[i], fs[i], tau[i], k)
                    for i in range(1, len(traj) - 1)])
    np.testing.assert_allclose(_centred(W, traj.times), rhs, rtol=0,
                               atol=1e-4 * np.abs(rhs).max())


def test_w_bar_rate_matches_time_difference_along_rescaled_flow(wavy_torus, rng):
    s, k = -1.0, 2.0
    dt = 0.5 * wavy_torus.cfl_bound()
    traj = integrate(FlowState(0.0, wavy_torus), 40 * dt, dt, "rescaled", Constant(s))
    f_T = smooth_random_field(wavy_torus, rng)
    f_T = f_T + math.log(weighted_mass(traj.final.metric, f_T))
    fs = conjugate_f_solve(traj, f_T)
    t_bar = traj.times - traj.times[0]
    W = np.array([
        w_bar_k(F_k_forms(m, f, k)[1], s, tb, k, 2, weighted_mass(m, f))
        for m, f, tb in zip(traj.metrics, fs, t_bar)
    ])
    rhs = np.array([rhs_w_bar(traj.metrics[i], fs[i], s, t_bar[i], k)
                    for i in range(1, len(traj) - 1)])
    np.testing.assert_allclose(_centred(W, t_bar), rhs, rtol=0,
                               atol=1e-4 * np.abs(rhs).max())


def test_monitor_on_shrinking_sphere(sphere):
    traj = integrate(FlowState(0.0, sphere), 0.3, 0.01)
    k = 2.0
    series = {ser.name: ser for ser in monitor(traj, k, tau0=1.0)}
    lam = 2.0 * k / (1.0 - 2.0 * traj.times)
    np.testing.assert_allclose(series["M1"].values, lam, rtol=1e-12)
    np.testing.assert_allclose(series["M4"].values, 8.0 * np.pi * k, rtol=1e-12)
    tau = 1.0 + traj.times
    np.testing.assert_allclose(series["M2"].values, tau**2 * (lam + k / tau), rtol=1e-12)
    np.testing.assert_allclose(series["M3"].values, lam, rtol=1e-12)
    assert series["M2"].params["tau0_user_set"]


def test_monitor_without_tau_on_ricci_run(sphere):
    traj = integrate(FlowState(0.0, sphere), 0.1, 0.01)
    names = [ser.name for ser in monitor(traj, 1.0)]
    assert names == ["M1", "M3", "M4"]


def test_monitor_on_rescaled_run(sphere):
    s = -1.0
    traj = integrate(FlowState(0.0, sphere), 0.2, 0.01, "rescaled", Constant(s))
    series = {ser.name: ser for ser in monitor(traj, 1.0)}
    assert set(series) == {"M1", "M2", "M3", "M4"}
    assert series["M2"].params["tau0"] == pytest.approx(4.0)
    assert not series["M2"].params["tau0_user_set"]
    assert np.all(np.diff(series["M1"].values) > 0)


def test_ricci_clock_maps_rescaled_time_back(sphere):
    s = -1.0
    traj = integrate(FlowState(0.0, sphere), 0.3, 0.01, "rescaled", Constant(s))
    t, phi, tau = ricci_clock(traj)
    np.testing.assert_allclose(t, np.expm1(traj.times), rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(phi, np.exp(-traj.times), rtol=1e-12)
    np.testing.assert_allclose(tau, 4.0 + t)


def test_coupled_series_on_rescaled_sphere(sphere):
    traj = integrate(FlowState(0.0, sphere), 0.2, 0.01, "rescaled", Constant(-1.0))
    series, fs = coupled_series(traj, 1.0)
    names = [ser.name for ser in series]
    assert names == ["F_k", "W_bar_k"]
    assert len(fs) == len(traj)
    w_bar = series[1].values
    assert np.all(np.diff(w_bar) > 0)


def test_coupled_series_on_ricci_sphere(sphere):
    traj = integrate(FlowState(0.0, sphere), 0.2, 0.01)
    series, _ = coupled_series(traj, 2.0, tau0=1.0)
    named = {ser.name: ser.values for ser in series}
    np.testing.assert_allclose(named["F_k"], 4.0 / (1.0 - 2.0 * traj.times), rtol=1e-7)
    assert np.all(np.diff(named["W_k"]) > 0)


def test_monitor_frame_layout(sphere):
    ks = (1.0, 2.0)
    traj = integrate(FlowState(0.0, sphere), 0.2, 0.02)
    df = monitor_frame(traj, ks)
    assert list(df.columns) == run_columns(ks)
    assert len(df) == len(traj)
    np.testing.assert_allclose(df["lambda_k1"], 2.0 / (1.0 - 2.0 * df["t"]), rtol=1e-12)
    np.testing.assert_allclose(df["F_k2"], 4.0 / (1.0 - 2.0 * df["t"]), rtol=1e-7)
    assert df["tau"].isna().all()
    assert df["W_k1"].isna().all()
    np.testing.assert_allclose(df["einstein_residual"], 0.0, atol=1e-12)
    np.testing.assert_allclose(df["soliton_residual"], 0.0, atol=1e-12)


def test_monitor_frame_without_coupling(sphere):
    traj = integrate(FlowState(0.0, sphere), 0.1, 0.02, "rescaled", Constant(-1.0))
    df = monitor_frame(traj, (1.0,), coupled=False)
    assert df["F_k1"].isna().all()
    assert df["M3_k1"].notna().all()
    np.testing.assert_allclose(df["s"], -1.0)
