"""Correspondence between Ricci flow and rescaled Ricci flow.

If ``g(t)`` solves Ricci flow, ``gbar = phi(t) g(t)`` at time ``tbar = int phi dt``
solves the rescaled flow driven by ``s``, with::

    phi(t) = 1 / (1 - (2/n) int_0^t s dt)

The weight transforms as ``fbar = f + (n/2) ln phi`` so that ``e^{-f} dmu`` is
unchanged.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid
from scipy.interpolate import CubicSpline

from .errors import DomainExhausted
from .flow import Constant, FlowState, integrate
from .geometry import RoundSphere

logger = logging.getLogger(__name__)

QUADRATURES = ("step", "simpson")


@dataclass(frozen=True, eq=False)
class RescaleMap:
    """Sampled scale factor, rescaled time and ``tau`` along a time grid.

    ``tau`` is ``None`` unless ``s`` is a nonzero constant. ``truncated`` is set
    when the map stops before the end of the grid.
    """

    n: int
    t: np.ndarray
    s_history: np.ndarray
    phi: np.ndarray
    t_bar: np.ndarray
    tau: np.ndarray = None
    truncated: bool = False

    def __len__(self):
        return len(self.t)


def _constant_value(s):
    s = np.asarray(s, dtype=float)
    if s.size and np.all(s == s[0]):
        return float(s[0])
    return None


def _check_grid(t):
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or t.size < 1:
        raise ValueError("time grid must be a non-empty 1D array")
    if t.size > 1:
        steps = np.diff(t)
        if np.any(steps <= 0):
            raise ValueError("time grid must be strictly increasing")
        if np.ptp(steps) > 1e-9 * steps.mean():
            raise ValueError("time grid must be uniform")
    return t


def tau_of_t(s, t, n):
    """``tau = -2n/s + t`` on the constant-``s`` branch."""
    if s == 0:
        raise ValueError("tau is undefined for s = 0")
    return -2.0 * n / s + np.asarray(t, dtype=float)


def build_map(n, s_history, t_grid, quadrature="step"):
    """Scale factor and rescaled time along a Ricci-flow time grid.

    Parameters
    ----------
    n : int
        Dimension.
    s_history : array_like
        ``s`` at the grid points. With ``quadrature="step"`` the value at
        ``t_i`` is held over ``[t_i, t_{i+1})`` and both integrals are exact.
    t_grid : array_like
        Uniform grid starting at 0.
    quadrature : str
        ``"step"`` (default) or ``"simpson"`` (composite Simpson on the samples).

    Raises
    ------
    DomainExhausted
        When ``1 - (2/n) int s dt`` reaches 0; the exception carries the map
        truncated to the valid prefix.
    """
    if quadrature not in QUADRATURES:
        raise ValueError(f"unknown quadrature '{quadrature}', expected one of {QUADRATURES}")
    t = _check_grid(t_grid)
    s = np.asarray(s_history, dtype=float)
    if s.shape != t.shape:
        raise ValueError(f"s_history has {s.size} samples for {t.size} grid points")
    t_rel = t - t[0]

    if quadrature == "simpson" and t.size >= 3:
        denom = 1.0 - (2.0 / n) * cumulative_simpson(s, x=t_rel, initial=0.0)
        bad = np.flatnonzero(denom <= 0)
        stop = bad[0] if bad.size else t.size
        t_exhausted = t[stop] if bad.size else None
        phi = 1.0 / denom[:stop]
        if stop >= 3:
            t_bar = cumulative_simpson(phi, x=t_rel[:stop], initial=0.0)
        else:
            t_bar = cumulative_trapezoid(phi, x=t_rel[:stop], initial=0.0)
    else:
        denom = np.empty_like(t)
        t_bar = np.empty_like(t)
        denom[0], t_bar[0] = 1.0, 0.0
        stop, t_exhausted = t.size, None
        for i in range(t.size - 1):
            h = t_rel[i + 1] - t_rel[i]
            rate = (2.0 / n) * s[i]
            denom[i + 1] = denom[i] - rate * h
            if denom[i + 1] <= 0:
                stop = i + 1
                t_exhausted = t[i] + denom[i] / rate
                break
            if s[i] == 0:
                t_bar[i + 1] = t_bar[i] + h / denom[i]
            else:
                t_bar[i + 1] = t_bar[i] + math.log(denom[i] / denom[i + 1]) / rate
        phi = 1.0 / denom[:stop]
        t_bar = t_bar[:stop]

    s_const = _constant_value(s)
    tau = tau_of_t(s_const, t[:stop], n) if s_const not in (None, 0.0) else None
    rescale_map = RescaleMap(n, t[:stop], s[:stop], phi, t_bar, tau,
                             truncated=stop < t.size)
    if t_exhausted is not None:
        logger.warning("scale factor undefined from t=%.6g on; map truncated to %d samples",
                       t_exhausted, stop)
        raise DomainExhausted(t_exhausted, rescale_map)
    return rescale_map


def from_rescaled(n, s_history, t_bar_grid):
    """Inverse correspondence along a rescaled run sampled on ``t_bar_grid``.

    Uses ``d phi / d tbar = (2/n) s phi`` and ``dt = d tbar / phi`` with ``s``
    held constant over each step. The returned map's ``t`` is Ricci time.
    """
    t_bar = _check_grid(t_bar_grid)
    s = np.asarray(s_history, dtype=float)
    if s.shape != t_bar.shape:
        raise ValueError(f"s_history has {s.size} samples for {t_bar.size} grid points")
    t_bar = t_bar - t_bar[0]
    phi = np.empty_like(t_bar)
    t = np.empty_like(t_bar)
    phi[0], t[0] = 1.0, 0.0
    for i in range(t_bar.size - 1):
        h = t_bar[i + 1] - t_bar[i]
        rate = (2.0 / n) * s[i]
        phi[i + 1] = phi[i] * math.exp(rate * h)
        if s[i] == 0:
            t[i + 1] = t[i] + h / phi[i]
        else:
            t[i + 1] = t[i] + (-math.expm1(-rate * h)) / (rate * phi[i])
    s_const = _constant_value(s)
    tau = tau_of_t(s_const, t, n) if s_const not in (None, 0.0) else None
    return RescaleMap(n, t, s, phi, t_bar, tau)


# ---------------------------------------------------------------------------
# Metric and weight transformations
# ---------------------------------------------------------------------------

def _shift(metric, f, log_phi):
    if isinstance(metric, RoundSphere):
        g = RoundSphere(metric.n, metric.r2 * math.exp(log_phi))
    else:
        g = metric.with_u(metric.u + 0.5 * log_phi)
    if f is not None:
        f = np.asarray(f, dtype=float) + 0.5 * metric.n * log_phi
    return g, f


def to_rescaled(g, f=None, phi_value=1.0):
    """``(phi g, f + (n/2) ln phi)``."""
    if not phi_value > 0:
        raise ValueError(f"scale factor must be positive, got {phi_value}")
    return _shift(g, f, math.log(phi_value))


def undo_rescale(g_bar, f_bar=None, phi_value=1.0):
    """Inverse of :func:`to_rescaled`."""
    if not phi_value > 0:
        raise ValueError(f"scale factor must be positive, got {phi_value}")
    return _shift(g_bar, f_bar, -math.log(phi_value))


def round_trip(g, f=None, phi_value=1.0):
    """Max componentwise error of :func:`undo_rescale` after :func:`to_rescaled`."""
    g_bar, f_bar = to_rescaled(g, f, phi_value)
    g_back, f_back = undo_rescale(g_bar, f_bar, phi_value)
    if isinstance(g, RoundSphere):
        err = abs(g_back.r2 - g.r2) / g.r2
    else:
        err = float(np.abs(g_back.u - g.u).max())
    if f is not None:
        err = max(err, float(np.max(np.abs(np.asarray(f_back) - np.asarray(f)))))
    return err


# ---------------------------------------------------------------------------
# Correspondence between a Ricci run and a direct rescaled run
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CorrespondenceReport:
    """Mapped Ricci flow against a direct rescaled run on the rescaled time grid."""

    max_error: float
    errors: np.ndarray
    t_bar: np.ndarray
    rescale_map: RescaleMap
    direct: object


def _metric_coords(metric):
    if isinstance(metric, RoundSphere):
        return np.array(metric.r2)
    return metric.u


def _discrepancy(q_mapped, metric_direct):
    if isinstance(metric_direct, RoundSphere):
        return abs(float(q_mapped) / metric_direct.r2 - 1.0)
    return float(np.abs(np.expm1(2.0 * (q_mapped - metric_direct.u))).max())


def correspondence_check(ricci_traj, s_const, dt=None):
    """Map a Ricci-flow run through ``(phi, tbar)`` and compare with a direct rescaled run.

    The direct run starts from the same initial metric (``phi(0) = 1``) with
    ``Constant(s_const)`` and step ``dt`` (default: the Ricci run's step
    scaled by the smallest ``phi``). Mapped states are resampled onto the
    direct run's time grid by a cubic spline in ``tbar``.
    """
    if ricci_traj.flow_kind != "ricci":
        raise ValueError("correspondence_check needs a Ricci-flow trajectory")
    n = ricci_traj.n
    times = ricci_traj.times
    rescale_map = build_map(n, np.full(times.size, float(s_const)), times)

    mapped = [
        _metric_coords(to_rescaled(st.metric, None, phi)[0])
        for st, phi in zip(ricci_traj.states, rescale_map.phi)
    ]
    t_bar_end = float(rescale_map.t_bar[-1])
    if dt is None:
        dt = ricci_traj.dt * float(np.min(rescale_map.phi))
    initial = FlowState(0.0, ricci_traj.states[0].metric)
    direct = integrate(initial, t_bar_end, dt, "rescaled", Constant(float(s_const)))

    spline = CubicSpline(rescale_map.t_bar, np.stack(mapped), axis=0)
    errors = np.array([
        _discrepancy(spline(min(st.t, t_bar_end)), st.metric) for st in direct.states
    ])
    logger.debug("correspondence s=%g: max discrepancy %.3g over %d samples",
                s_const, errors.max(), errors.size)
    return CorrespondenceReport(float(errors.max()), errors, direct.times, rescale_map, direct)
