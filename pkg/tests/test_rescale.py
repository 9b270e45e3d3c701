import math

import numpy as np
import pytest

from ricci_lab import (
    ConformalTorus,
    Constant,
    DomainExhausted,
    FlowState,
    RoundSphere,
    build_map,
    correspondence_check,
    from_rescaled,
    integrate,
    integrate_field,
    round_trip,
    tau_of_t,
    to_rescaled,
    undo_rescale,
)
from ricci_lab.geometry import smooth_random_field


@pytest.mark.parametrize("s", [-1.0, -5.0, 0.5])
def test_constant_s_closed_forms(s):
    n = 2
    t = np.linspace(0.0, 0.5, 51)
    rescale_map = build_map(n, np.full(t.size, s), t)
    a = 2.0 * s / n
    np.testing.assert_allclose(rescale_map.phi, 1.0 / (1.0 - a * t), rtol=1e-12)
    np.testing.assert_allclose(rescale_map.t_bar, -np.log(1.0 - a * t) / a, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(rescale_map.tau, -2.0 * n / s + t)
    assert not rescale_map.truncated


def test_zero_s_is_identity():
    t = np.linspace(0.0, 1.0, 11)
    rescale_map = build_map(3, np.zeros(t.size), t)
    np.testing.assert_array_equal(rescale_map.phi, 1.0)
    np.testing.assert_allclose(rescale_map.t_bar, t, atol=1e-14)
    assert rescale_map.tau is None


def test_positive_s_exhausts_domain():
    t = np.linspace(0.0, 2.0, 21)
    with pytest.raises(DomainExhausted) as excinfo:
        build_map(2, np.ones(t.size), t)
    assert excinfo.value.t == pytest.approx(1.0, abs=1e-12)
    partial = excinfo.value.rescale_map
    assert partial.truncated
    assert partial.t[-1] <= 1.0 + 1e-12
    assert np.all(np.isfinite(partial.phi))


def test_varying_s_uses_step_quadrature():
    t = np.linspace(0.0, 0.3, 4)
    s = np.array([-1.0, 0.0, -2.0, 7.0])
    rescale_map = build_map(2, s, t)
    expected = np.array([1.0, 1.1, 1.1, 1.3])
    np.testing.assert_allclose(1.0 / rescale_map.phi, expected, rtol=1e-12)
    assert rescale_map.tau is None


def test_simpson_agrees_with_step_for_constant_s():
    t = np.linspace(0.0, 0.5, 51)
    s = np.full(t.size, -1.0)
    step = build_map(2, s, t)
    simpson = build_map(2, s, t, quadrature="simpson")
    np.testing.assert_allclose(simpson.phi, step.phi, rtol=1e-13)
    np.testing.assert_allclose(simpson.t_bar, step.t_bar, atol=1e-8)


@pytest.mark.parametrize("kwargs", [
    {"s_history": np.zeros(3), "t_grid": np.array([0.0, 0.1, 0.3])},
    {"s_history": np.zeros(3), "t_grid": np.array([0.0, 0.2, 0.1])},
    {"s_history": np.zeros(2), "t_grid": np.array([0.0, 0.1, 0.2])},
    {"s_history": np.zeros(3), "t_grid": np.array([0.0, 0.1, 0.2]), "quadrature": "gauss"},
])
def test_build_map_argument_errors(kwargs):
    with pytest.raises(ValueError):
        build_map(2, **kwargs)


def test_tau_of_t():
    assert tau_of_t(-1.0, 0.0, 2) == pytest.approx(4.0)
    np.testing.assert_allclose(tau_of_t(-5.0, [0.0, 1.0], 2), [0.8, 1.8])
    with pytest.raises(ValueError):
        tau_of_t(0.0, 0.0, 2)


def test_inverse_map_closed_form():
    t_bar = np.linspace(0.0, 1.0, 101)
    inverse = from_rescaled(2, np.full(t_bar.size, -1.0), t_bar)
    np.testing.assert_allclose(inverse.phi, np.exp(-t_bar), rtol=1e-12)
    np.testing.assert_allclose(inverse.t, np.expm1(t_bar), rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("phi", [1.0, 7.3, 1e-6])
def test_round_trip_torus(wavy_torus, rng, phi):
    f = smooth_random_field(wavy_torus, rng)
    assert round_trip(wavy_torus, f, phi) <= 1e-10


@pytest.mark.parametrize("phi", [1.0, 7.3, 1e-6])
def test_round_trip_sphere(sphere, sphere_weight, phi):
    assert round_trip(sphere, sphere_weight, phi) <= 1e-13


def test_identity_scale_is_exact(wavy_torus):
    assert round_trip(wavy_torus, None, 1.0) == 0.0


def test_weighted_measure_is_scale_invariant(wavy_torus, rng):
    f = smooth_random_field(wavy_torus, rng)
    g_bar, f_bar = to_rescaled(wavy_torus, f, 2.5)
    assert integrate_field(g_bar, np.exp(-f_bar)) == pytest.approx(
        integrate_field(wavy_torus, np.exp(-f)), rel=1e-12)
    assert g_bar.volume() == pytest.approx(2.5 * wavy_torus.volume(), rel=1e-12)


def test_sphere_rescaling(sphere):
    g_bar, f_bar = to_rescaled(sphere, np.float64(0.0), 3.0)
    assert isinstance(g_bar, RoundSphere)
    assert g_bar.r2 == pytest.approx(3.0)
    assert float(f_bar) == pytest.approx(math.log(3.0))
    back, _ = undo_rescale(g_bar, None, 3.0)
    assert back.r2 == pytest.approx(1.0)


def test_non_positive_scale_is_rejected(sphere):
    with pytest.raises(ValueError):
        to_rescaled(sphere, None, 0.0)
    with pytest.raises(ValueError):
        undo_rescale(sphere, None, -1.0)


def test_sphere_correspondence(sphere):
    traj = integrate(FlowState(0.0, sphere), 0.3, 0.01)
    report = correspondence_check(traj, -2.0)
    assert report.max_error <= 1e-6
    assert report.direct.flow_kind == "rescaled"
    assert report.t_bar[-1] == pytest.approx(report.rescale_map.t_bar[-1])


def test_torus_correspondence():
    torus = ConformalTorus.sinusoid(16, 16, 3.0, 3.0, amplitude=0.05, modes=((1, 0), (0, 1)))
    dt = 0.5 * torus.cfl_bound()
    traj = integrate(FlowState(0.0, torus), 0.02, dt)
    report = correspondence_check(traj, -1.0)
    assert report.max_error <= 1e-6


def test_correspondence_needs_ricci_run(sphere):
    traj = integrate(FlowState(0.0, sphere), 0.1, 0.01, "rescaled", Constant(-1.0))
    with pytest.raises(ValueError):
        correspondence_check(traj, -1.0)
