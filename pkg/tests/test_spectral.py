import math

import numpy as np
import pytest

from ricci_lab import (
    ConformalTorus,
    NonPositiveEigenfunction,
    SpectralResult,
    ZeroField,
    dense_lowest_eigenpair,
    eigenpairs,
    f_from_eigenfunction,
    lambda_bar,
    lowest_eigenpair,
    rayleigh_quotient,
)
from ricci_lab.geometry import smooth_random_field


def test_flat_torus_ground_state_is_constant(flat_torus):
    result = lowest_eigenpair(flat_torus, 1.0)
    assert abs(result.lam) <= 1e-9
    np.testing.assert_allclose(result.u_eig, flat_torus.volume() ** -0.5, rtol=1e-8)
    assert result.residual <= 1e-9


@pytest.mark.parametrize("k", [1.0, 2.0, 5.0])
def test_sphere_eigenvalue_is_k_times_curvature(sphere, k):
    result = lowest_eigenpair(sphere, k)
    assert result.lam == pytest.approx(2.0 * k, rel=1e-15)
    assert float(result.u_eig) == pytest.approx((4 * math.pi) ** -0.5)


@pytest.mark.parametrize("k", [1.0, 2.5])
def test_iterative_solver_matches_dense_oracle(rng, k):
    flat = ConformalTorus.flat(16, 16, 2.0, 2.0)
    metric = flat.with_u(smooth_random_field(flat, rng, amplitude=0.3))
    result = lowest_eigenpair(metric, k)
    oracle = dense_lowest_eigenpair(metric, k)
    assert result.lam == pytest.approx(oracle.lam, rel=1e-8, abs=1e-8)
    np.testing.assert_allclose(result.u_eig, oracle.u_eig, atol=1e-6)


def test_dense_oracle_on_64_grid_sinusoid():
    metric = ConformalTorus.sinusoid(64, 64, 1.0, 1.0, amplitude=0.1, modes=((1, 0), (0, 1)))
    result = lowest_eigenpair(metric, 2.0)
    oracle = dense_lowest_eigenpair(metric, 2.0)
    assert result.lam == pytest.approx(oracle.lam, rel=1e-8, abs=1e-8)
    np.testing.assert_allclose(result.u_eig, oracle.u_eig, atol=1e-6)
    assert oracle.residual <= 1e-8


def test_dense_oracle_refuses_larger_grids():
    with pytest.raises(ValueError):
        dense_lowest_eigenpair(ConformalTorus.flat(72, 72), 1.0)


def test_eigenfunction_is_positive_and_normalized(wavy_torus):
    result = lowest_eigenpair(wavy_torus, 2.0)
    assert result.u_eig.min() > 0
    mass = float(np.sum(result.u_eig**2 * wavy_torus.measure_weight()))
    assert mass == pytest.approx(1.0, abs=1e-12)


def test_rayleigh_quotient_is_minimized_by_eigenfunction(wavy_torus, rng):
    result = lowest_eigenpair(wavy_torus, 1.0)
    assert rayleigh_quotient(wavy_torus, 1.0, result.u_eig) == pytest.approx(result.lam, rel=1e-9,
                                                                             abs=1e-12)
    trial = 1.0 + smooth_random_field(wavy_torus, rng)
    assert rayleigh_quotient(wavy_torus, 1.0, trial) >= result.lam


def test_rayleigh_quotient_rejects_zero_field(flat_torus):
    with pytest.raises(ZeroField):
        rayleigh_quotient(flat_torus, 1.0, np.zeros(flat_torus.shape))


def test_k_below_one_is_rejected(flat_torus):
    with pytest.raises(ValueError):
        lowest_eigenpair(flat_torus, 0.5)


@pytest.mark.parametrize("c", [0.5, 2.0, 10.0])
def test_lambda_bar_is_scale_invariant(wavy_torus, c):
    base = lambda_bar(wavy_torus, 2.0)
    assert lambda_bar(wavy_torus.scaled(c), 2.0) == pytest.approx(base, rel=1e-9)


def test_lambda_scales_inversely_with_metric(wavy_torus):
    lam = lowest_eigenpair(wavy_torus, 1.0).lam
    assert lowest_eigenpair(wavy_torus.scaled(4.0), 1.0).lam == pytest.approx(lam / 4.0, rel=1e-9)


def test_weight_from_eigenfunction(sphere):
    result = lowest_eigenpair(sphere, 1.0)
    assert float(f_from_eigenfunction(result)) == pytest.approx(math.log(4 * math.pi))


def test_weight_requires_positive_eigenfunction(flat_torus):
    u = np.ones(flat_torus.shape)
    u[3, 4] = -0.1
    fake = SpectralResult(0.0, u, 1.0, 0.0, flat_torus)
    with pytest.raises(NonPositiveEigenfunction):
        f_from_eigenfunction(fake)


def test_parallel_eigenpairs_keep_input_order(wavy_torus):
    metrics = [wavy_torus.scaled(c) for c in (1.0, 2.0, 3.0, 4.0)]
    serial = eigenpairs(metrics, 1.0)
    parallel = eigenpairs(metrics, 1.0, workers=3)
    for a, b in zip(serial, parallel):
        assert a.lam == pytest.approx(b.lam, rel=1e-12)
        assert a.metric is b.metric
