"""Entropy functionals, their evolution right-hand sides and the monitored series.

Conventions: ``f`` is a weight with weighted measure ``e^{-f} dmu``; tensor
norms are metric norms ``g^{ik} g^{jl} T_ij T_kl``; ``n`` defaults to the
metric's dimension.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import FormMismatch
from .flow import conjugate_f_solve, weighted_mass
from .geometry import integrate
from .rescale import from_rescaled, tau_of_t
from .spectral import DEFAULT_TOL, eigenpairs, f_from_eigenfunction, lambda_bar

logger = logging.getLogger(__name__)

FORM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MonitorSeries:
    """A monitored quantity sampled at every state of a trajectory."""

    name: str
    k: float
    values: np.ndarray
    times: np.ndarray
    params: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.values)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def _dim(metric, n):
    return metric.n if n is None else n


def _weighted(metric, integrand, f):
    return integrate(metric, integrand, np.exp(-np.asarray(f, dtype=float)))


def _sq(metric, tensor, f):
    """``int |T|^2 e^{-f} dmu``."""
    return _weighted(metric, metric.tensor_norm_sq(tensor), f)


def _shifted_terms(metric, f, k, c):
    """``2(k-1) int |Rc + c g|^2 e^{-f} + 2 int |Rc + Hess f + c g|^2 e^{-f}``."""
    c = float(c)
    rc = metric.ricci()
    g = metric.metric_tensor()
    hess = metric.hessian(f)
    return (2.0 * (k - 1.0) * _sq(metric, rc + g * c, f)
            + 2.0 * _sq(metric, rc + hess + g * c, f))


def _agree(name, a, b, scale, tol):
    if abs(a - b) > tol * max(abs(a), abs(b), scale):
        raise FormMismatch(name, a, b, tol)


# ---------------------------------------------------------------------------
# Functionals
# ---------------------------------------------------------------------------

def F_k_forms(metric, f, k):
    """Gradient form ``int (kR + |grad f|^2) e^{-f}`` and Laplacian form ``int (kR + Delta f) e^{-f}``."""
    f = np.asarray(f, dtype=float)
    if not np.all(np.isfinite(f)):
        raise ValueError("f has non-finite nodes")
    R = metric.scalar_curvature()
    grad = _weighted(metric, k * R + metric.gradient_norm_sq(f), f)
    lap = _weighted(metric, k * R + metric.laplace_beltrami(f), f)
    return grad, lap


def F_k(metric, f, k, tol=FORM_TOL):
    """``F_k(g, f) = int (kR + |grad f|^2) e^{-f} dmu``.

    The Laplacian form is evaluated alongside and must agree to relative
    ``tol``.

    Raises
    ------
    FormMismatch
        When the two forms differ beyond ``tol``.
    """
    grad, lap = F_k_forms(metric, f, k)
    scale = _weighted(
        metric,
        k * np.abs(metric.scalar_curvature()) + metric.gradient_norm_sq(f)
        + np.abs(metric.laplace_beltrami(f)),
        f,
    )
    _agree("F_k gradient/Laplacian forms", grad, lap, scale, tol)
    return grad


def w_k(metric, f, tau, k, n=None):
    """``tau^2 int [k(R + n/(2 tau)) + Delta f] e^{-f} dmu``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    n = _dim(metric, n)
    integrand = k * (metric.scalar_curvature() + n / (2.0 * tau)) + metric.laplace_beltrami(f)
    return tau**2 * _weighted(metric, integrand, f)


def w_bar_k(F_bar_value, s, t_bar, k, n, mass=1.0):
    """``e^{-(2s/n) tbar} (Fbar_k - k s)``; ``mass`` is ``int e^{-f} dmu`` when not 1."""
    return math.exp(-(2.0 * s / n) * t_bar) * (F_bar_value - k * s * mass)


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def rhs_f_variation(metric, f, k):
    """``2(k-1) int |Rc|^2 e^{-f} + 2 int |Rc + Hess f|^2 e^{-f}``: dF_k/dt along the coupled Ricci flow."""
    return _shifted_terms(metric, f, k, 0.0)


def rhs_rescaled_F(metric, f, k, s, n=None, tol=FORM_TOL):
    """Two forms of dFbar_k/dtbar along the coupled rescaled flow.

    ``form_A = -(2s/n) F + 2(k-1) int |Rc|^2 e^{-f} + 2 int |Rc + Hess f|^2 e^{-f}``

    ``form_B = (2s/n) F - 2ks^2/n + 2(k-1) int |Rc - (s/n) g|^2 e^{-f}
    + 2 int |Rc + Hess f - (s/n) g|^2 e^{-f}``

    ``F`` is the Laplacian form. The forms differ by ``(2ks^2/n)(int e^{-f} dmu - 1)``,
    so agreement is asserted only under unit weighted measure.
    """
    n = _dim(metric, n)
    _, F = F_k_forms(metric, f, k)
    form_a = -(2.0 * s / n) * F + rhs_f_variation(metric, f, k)
    form_b = ((2.0 * s / n) * F - 2.0 * k * s**2 / n
              + _shifted_terms(metric, f, k, -s / n))
    mass = weighted_mass(metric, f)
    if abs(mass - 1.0) <= 1e-12:
        _agree("rescaled F_k forms", form_a, form_b, 1.0, tol)
    return form_a, form_b


def rhs_lambda(metric, spectral_result, k, s, n=None):
    """``(2s/n)(lam - ks) + 2(k-1) int |Rc - (s/n) g|^2 e^{-f} + 2 int |Rc + Hess f - (s/n) g|^2 e^{-f}``.

    ``f`` is the weight of the eigenfunction of ``spectral_result``.
    """
    n = _dim(metric, n)
    f = f_from_eigenfunction(spectral_result)
    lam = spectral_result.lam
    return (2.0 * s / n) * (lam - k * s) + _shifted_terms(metric, f, k, -s / n)


def rhs_w_variation(metric, f, tau, k, n=None):
    """``2(k-1) tau^2 int |Rc + g/(2tau)|^2 e^{-f} + 2 tau^2 int |Rc + Hess f + g/(2tau)|^2 e^{-f}``.

    dW_k/dt along the coupled Ricci flow with ``dtau/dt = 1``.
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    return tau**2 * _shifted_terms(metric, f, k, 1.0 / (2.0 * tau))


def rhs_w_bar(metric, f, s, t_bar, k, n=None):
    """dWbar_k/dtbar: ``e^{-(2s/n) tbar}`` times the two ``s/n``-shifted square terms."""
    n = _dim(metric, n)
    return math.exp(-(2.0 * s / n) * t_bar) * _shifted_terms(metric, f, k, -s / n)


def einstein_residual(metric, s, n=None):
    """``int |Rc - (s/n) g|^2 dmu / V``."""
    n = _dim(metric, n)
    tensor = metric.ricci() - metric.metric_tensor() * float(s / n)
    return integrate(metric, metric.tensor_norm_sq(tensor)) / metric.volume()


def soliton_residual(metric, f, s, n=None):
    """``int |Rc + Hess f - (s/n) g|^2 e^{-f} dmu``."""
    n = _dim(metric, n)
    tensor = metric.ricci() + metric.hessian(f) - metric.metric_tensor() * float(s / n)
    return _sq(metric, tensor, f)


def einstein_constant(metric):
    """Average scalar curvature, the ``s`` of the best-fitting Einstein metric."""
    return integrate(metric, metric.scalar_curvature()) / metric.volume()


def soliton_constant(metric, f):
    """``s`` of the best-fitting gradient soliton: weighted average of ``R + Delta f``."""
    integrand = metric.scalar_curvature() + metric.laplace_beltrami(f)
    return _weighted(metric, integrand, f) / weighted_mass(metric, f)


# ---------------------------------------------------------------------------
# Series along trajectories
# ---------------------------------------------------------------------------

def _constant_s(trajectory):
    s = np.asarray(trajectory.s_samples, dtype=float)
    if trajectory.flow_kind == "ricci":
        return 0.0
    if s.size and np.all(s == s[0]):
        return float(s[0])
    return None


def ricci_clock(trajectory, tau0=None):
    """Ricci-frame time, scale factor and ``tau`` at every state.

    Ricci runs have ``phi = 1``. Rescaled runs are mapped back through the
    inverse correspondence; ``tau`` then defaults to ``-2n/s + t`` for a
    nonzero constant ``s``. ``tau`` is ``None`` where it is undefined.
    """
    times = trajectory.times - trajectory.times[0]
    n = trajectory.n
    if trajectory.flow_kind == "ricci":
        t, phi = times, np.ones_like(times)
        tau = tau0 + t if tau0 is not None else None
        return t, phi, tau
    inverse = from_rescaled(n, trajectory.s_samples, times)
    t, phi = inverse.t, inverse.phi
    if tau0 is not None:
        tau = tau0 + t
    else:
        s = _constant_s(trajectory)
        tau = tau_of_t(s, t, n) if s not in (None, 0.0) else None
    return t, phi, tau


def monitor(trajectory, k, tau0=None, s=None, results=None, tol=DEFAULT_TOL, workers=1):
    """Monitored series M1..M4 at every state of ``trajectory``.

    * ``M1 = lam``
    * ``M2 = tau^2 (lam + k n / (2 tau))`` in the Ricci frame (``lam`` scaled by
      ``phi`` on rescaled runs); present when ``tau`` is defined and positive.
    * ``M3 = e^{-(2s/n) t} (lam - k s)`` for constant ``s`` (the trajectory's own
      or the one given).
    * ``M4 = lam V^{2/n}``

    ``results`` may carry precomputed eigenpairs aligned with the states.
    """
    if results is None:
        results = eigenpairs(trajectory.metrics, k, tol=tol, workers=workers)
    n = trajectory.n
    times = trajectory.times
    lam = np.array([r.lam for r in results])
    series = [MonitorSeries("M1", k, lam, times)]

    _, phi, tau = ricci_clock(trajectory, tau0)
    if tau is not None and np.all(tau > 0):
        m2 = tau**2 * (phi * lam + k * n / (2.0 * tau))
        params = {"tau0": float(tau[0]), "tau0_user_set": tau0 is not None}
        series.append(MonitorSeries("M2", k, m2, times, params))

    if s is None:
        s = _constant_s(trajectory)
    if s is not None:
        elapsed = times - times[0]
        m3 = np.exp(-(2.0 * s / n) * elapsed) * (lam - k * s)
        series.append(MonitorSeries("M3", k, m3, times, {"s": s}))

    m4 = np.array([lambda_bar(st.metric, k, r) for st, r in zip(trajectory.states, results)])
    series.append(MonitorSeries("M4", k, m4, times))
    return series


def coupled_series(trajectory, k, f_terminal=None, tau0=None, terminal_result=None):
    """F_k and W_k (Ricci runs) or Wbar_k (constant-s rescaled runs) along the coupled system.

    ``f`` is solved backward from ``f_terminal`` (default: the eigenfunction
    weight of the final metric). Returns ``(series, f_history)``.
    """
    if f_terminal is None:
        if terminal_result is None:
            terminal_result = eigenpairs([trajectory.final.metric], k)[0]
        f_terminal = f_from_eigenfunction(terminal_result)
    fs = conjugate_f_solve(trajectory, f_terminal)
    times = trajectory.times
    n = trajectory.n
    metrics = trajectory.metrics

    F = np.array([F_k_forms(m, f, k)[1] for m, f in zip(metrics, fs)])
    series = [MonitorSeries("F_k", k, F, times)]

    if trajectory.flow_kind == "ricci":
        _, _, tau = ricci_clock(trajectory, tau0)
        if tau is not None and np.all(tau > 0):
            W = np.array([w_k(m, f, ta, k, n) for m, f, ta in zip(metrics, fs, tau)])
            series.append(MonitorSeries("W_k", k, W, times, {"tau0": float(tau[0])}))
    else:
        s = _constant_s(trajectory)
        if s is not None:
            elapsed = times - times[0]
            W = np.array([
                w_bar_k(Fi, s, tb, k, n, weighted_mass(m, f))
                for Fi, tb, m, f in zip(F, elapsed, metrics, fs)
            ])
            series.append(MonitorSeries("W_bar_k", k, W, times, {"s": s}))
    return series, fs


def monitor_frame(trajectory, ks, tau0=None, tol=DEFAULT_TOL, workers=1, coupled=True):
    """The per-state table written by ``run``.

    Columns: ``t, t_bar, tau, s, volume``, then per ``k``
    ``lambda_k{K}, lambda_bar_k{K}, F_k{K}, W_k{K}, M2_k{K}, M3_k{K}``, then
    ``einstein_residual, soliton_residual``. Undefined entries are NaN.
    """
    n_states = len(trajectory)
    t, _, tau = ricci_clock(trajectory, tau0)
    t_bar = trajectory.times - trajectory.times[0]
    if trajectory.flow_kind == "ricci":
        t_bar = t

    columns = {
        "t": t,
        "t_bar": t_bar,
        "tau": tau if tau is not None else np.full(n_states, np.nan),
        "s": np.asarray(trajectory.s_samples, dtype=float)[:n_states],
        "volume": np.array([m.volume() for m in trajectory.metrics]),
    }

    first_f = None
    for k in ks:
        label = f"{k:g}"
        results = eigenpairs(trajectory.metrics, k, tol=tol, workers=workers)
        by_name = {ser.name: ser.values for ser in monitor(trajectory, k, tau0, results=results)}
        nan = np.full(n_states, np.nan)
        columns[f"lambda_k{label}"] = by_name["M1"]
        columns[f"lambda_bar_k{label}"] = by_name["M4"]
        F = W = nan
        if coupled:
            series, _ = coupled_series(trajectory, k, tau0=tau0, terminal_result=results[-1])
            named = {ser.name: ser.values for ser in series}
            F = named["F_k"]
            W = named.get("W_k", named.get("W_bar_k", nan))
        columns[f"F_k{label}"] = F
        columns[f"W_k{label}"] = W
        columns[f"M2_k{label}"] = by_name.get("M2", nan)
        columns[f"M3_k{label}"] = by_name.get("M3", nan)
        if first_f is None:
            first_f = [f_from_eigenfunction(r) for r in results]

    metrics = trajectory.metrics
    columns["einstein_residual"] = np.array(
        [einstein_residual(m, einstein_constant(m)) for m in metrics])
    columns["soliton_residual"] = np.array(
        [soliton_residual(m, f, soliton_constant(m, f)) for m, f in zip(metrics, first_f)])
    logger.debug("monitor frame: %d states, k=%s", n_states, list(ks))
    return pd.DataFrame(columns)
