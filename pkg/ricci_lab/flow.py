"""Ricci flow, rescaled Ricci flow and the backward conjugate f-equation.

On the conformal torus the flows reduce to scalar PDEs for the log-conformal
factor::

    ricci:     du/dt = -R/2       = e^{-2u} Delta_0 u
    rescaled:  du/dt = (s - R)/2

and on round spheres to ODEs for the squared radius::

    ricci:     dr2/dt = -2(n-1)
    rescaled:  dr2/dt = -2(n-1) + (2s/n) r2

Everything is advanced with classical RK4. ``s`` is sampled once per step at
the step's start and held constant over the step.
"""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUp, StabilityViolation, TrajectoryTruncated
from .geometry import RoundSphere, integrate as integrate_field
from .spectral import DEFAULT_TOL, lowest_eigenpair

try:
    from tqdm import tqdm
    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False

logger = logging.getLogger(__name__)

FLOW_KINDS = ("ricci", "rescaled", "normalized")
U_CAP = 20.0
R2_FLOOR = 1e-12
_CFL_SLACK = 1.0 + 1e-12


# ---------------------------------------------------------------------------
# s(t) providers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Constant:
    s0: float

    def __post_init__(self):
        if not math.isfinite(self.s0):
            raise ValueError(f"Constant provider needs a finite s0, got {self.s0}")

    def describe(self):
        return f"constant(s0={self.s0:g})"


@dataclass(frozen=True)
class AverageScalar:
    """``s = int R dmu / V``: Hamilton's normalized flow."""

    def describe(self):
        return "average_scalar"


@dataclass(frozen=True)
class EigenNormalized:
    """``s = lam_k / k`` from a fresh eigensolve of the current metric."""

    k: float = 1.0
    tol: float = DEFAULT_TOL

    def describe(self):
        return f"eigen_normalized(k={self.k:g})"


@dataclass(frozen=True, eq=False)
class TestFunction:
    """``s = int (kR + |grad phi|^2) e^{-phi} dmu / (k int e^{-phi} dmu)`` for a fixed ``phi``."""

    test_fn: np.ndarray
    k: float = 1.0

    __test__ = False

    def __post_init__(self):
        if not np.all(np.isfinite(self.test_fn)):
            raise ValueError("TestFunction provider needs a finite test function")

    def describe(self):
        return f"test_function(k={self.k:g})"


def s_value(provider, state, spectral_result=None):
    """Evaluate ``s`` for ``state.metric``.

    ``spectral_result`` is only consulted by :class:`EigenNormalized`; when it
    is omitted the eigenpair is computed here.
    """
    metric = state.metric
    if provider is None:
        return 0.0
    if isinstance(provider, Constant):
        return float(provider.s0)
    if isinstance(provider, AverageScalar):
        return integrate_field(metric, metric.scalar_curvature()) / metric.volume()
    if isinstance(provider, EigenNormalized):
        if spectral_result is None:
            spectral_result = lowest_eigenpair(metric, provider.k, tol=provider.tol)
        return spectral_result.lam / provider.k
    if isinstance(provider, TestFunction):
        phi = provider.test_fn
        weight = np.exp(-phi)
        integrand = provider.k * metric.scalar_curvature() + metric.gradient_norm_sq(phi)
        return integrate_field(metric, integrand, weight) / (
            provider.k * integrate_field(metric, np.ones_like(phi), weight))
    raise TypeError(f"unknown s provider {provider!r}")


# ---------------------------------------------------------------------------
# States and trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    metric: object
    f: np.ndarray = None


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States at ``t0 < t1 < ... < tN`` with the ``s`` sampled at each of them.

    ``s_samples[i]`` is the value that drove the step from ``t_i`` to
    ``t_{i+1}``; the last entry is sampled at the final state.
    """

    states: tuple
    s_samples: np.ndarray
    dt: float
    flow_kind: str
    provider: object = None
    truncated: str = None
    extras: dict = field(default_factory=dict)

    @property
    def times(self):
        return np.array([st.t for st in self.states])

    @property
    def metrics(self):
        return [st.metric for st in self.states]

    @property
    def final(self):
        return self.states[-1]

    @property
    def n(self):
        return self.states[0].metric.n

    def __len__(self):
        return len(self.states)


# ---------------------------------------------------------------------------
# Right-hand sides
# ---------------------------------------------------------------------------

def _coords(metric):
    return metric.u if not isinstance(metric, RoundSphere) else float(metric.r2)


def _with_coords(metric, q):
    if isinstance(metric, RoundSphere):
        return RoundSphere(metric.n, float(q))
    return metric.with_u(q)


def _rate(metric, q, s):
    """Velocity of the metric coordinate ``q`` (``u`` or ``r2``)."""
    if isinstance(metric, RoundSphere):
        n = metric.n
        return -2.0 * (n - 1) + (2.0 * s / n) * q
    return 0.5 * s + metric.flat_laplacian(q) * np.exp(-2.0 * q)


def metric_velocity(metric, s=0.0):
    """``du/dt`` (torus) or ``dr2/dt`` (sphere) of the flow driven by ``s``."""
    return _rate(metric, _coords(metric), s)


def _guard(metric, q, t):
    if isinstance(metric, RoundSphere):
        if not math.isfinite(q) or q <= R2_FLOOR:
            raise BlowUp(f"r2={q:.6g} at t={t:.6g}")
        return
    if not np.isfinite(q).all():
        raise BlowUp(f"non-finite u at t={t:.6g}")
    peak = float(np.abs(q).max())
    if peak > U_CAP:
        raise BlowUp(f"|u|={peak:.6g} exceeds cap {U_CAP:g} at t={t:.6g}")


def _check_cfl(metric, dt):
    bound = metric.cfl_bound()
    if dt > bound * _CFL_SLACK:
        raise StabilityViolation(dt, bound)


def _rk4(metric, q, dt, s):
    k1 = _rate(metric, q, s)
    k2 = _rate(metric, q + 0.5 * dt * k1, s)
    k3 = _rate(metric, q + 0.5 * dt * k2, s)
    k4 = _rate(metric, q + dt * k3, s)
    return q + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _advance(state, dt, s, t_next=None):
    metric = state.metric
    _check_cfl(metric, dt)
    t_next = state.t + dt if t_next is None else t_next
    with np.errstate(over="ignore", invalid="ignore"):
        q = _rk4(metric, _coords(metric), dt, s)
    _guard(metric, q, t_next)
    return FlowState(t_next, _with_coords(metric, q))


def step_ricci(state, dt):
    """One RK4 step of ``dg/dt = -2 Ric``."""
    return _advance(state, dt, 0.0)


def step_rescaled(state, dt, provider, spectral_result=None):
    """One RK4 step of ``dg/dt = -2 (Ric - (s/n) g)`` with ``s`` from ``provider``."""
    return _advance(state, dt, s_value(provider, state, spectral_result))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

def step_count(T, dt):
    """Number of uniform steps so that ``T / N <= dt``."""
    return max(1, int(math.ceil(T / dt * (1.0 - 1e-12))))


def integrate(initial, T, dt, flow_kind="ricci", provider=None, progress=False):
    """Integrate a flow from ``initial`` over ``[t0, t0 + T]``.

    Parameters
    ----------
    initial : FlowState
    T : float
        Duration, ``> 0``.
    dt : float
        Requested step; the effective step is ``T / ceil(T / dt)``.
    flow_kind : str
        ``"ricci"``, ``"rescaled"`` or ``"normalized"``.
    provider : Constant, AverageScalar, EigenNormalized or TestFunction
        Required for ``rescaled``; ``normalized`` uses :class:`AverageScalar`.
    progress : bool
        Show a tqdm bar when tqdm is installed.

    Returns
    -------
    Trajectory

    Raises
    ------
    TrajectoryTruncated
        When the metric blows up; carries the partial trajectory.
    StabilityViolation
        When ``dt`` exceeds the CFL bound at some step.
    """
    if not (T > 0 and math.isfinite(T)):
        raise ValueError(f"T must be positive, got {T}")
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive, got {dt}")
    if flow_kind not in FLOW_KINDS:
        raise ValueError(f"unknown flow kind '{flow_kind}', expected one of {FLOW_KINDS}")
    if flow_kind == "ricci":
        provider = None
    elif flow_kind == "normalized":
        provider = AverageScalar()
    elif provider is None:
        raise ValueError("rescaled flow needs an s provider")

    n_steps = step_count(T, dt)
    h = T / n_steps
    t0 = initial.t
    logger.debug("integrating %s flow: %d steps of dt=%.6g (%s)", flow_kind, n_steps, h,
                provider.describe() if provider is not None else "s=0")

    states = [FlowState(t0, initial.metric)]
    s_samples = []
    steps = range(n_steps)
    if progress and TQDM_AVAILABLE:
        steps = tqdm(steps, desc=f"{flow_kind} flow", unit="step")

    state = states[0]
    for i in steps:
        s = s_value(provider, state)
        s_samples.append(s)
        try:
            state = _advance(state, h, s, t_next=t0 + (i + 1) * h)
        except BlowUp as exc:
            partial = Trajectory(tuple(states), np.array(s_samples), h, flow_kind,
                                 provider, truncated=str(exc))
            logger.warning("trajectory truncated after %d of %d steps: %s", i, n_steps, exc)
            raise TrajectoryTruncated(str(exc), partial) from exc
        states.append(state)

    s_samples.append(s_value(provider, state))
    return Trajectory(tuple(states), np.array(s_samples), h, flow_kind, provider)


# ---------------------------------------------------------------------------
# Interpolation between samples
# ---------------------------------------------------------------------------

def _hermite(q0, q1, v0, v1, h, theta):
    t2, t3 = theta * theta, theta * theta * theta
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + theta
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return h00 * q0 + h10 * h * v0 + h01 * q1 + h11 * h * v1


def metric_at(trajectory, t):
    """Metric at time ``t`` by cubic Hermite interpolation of values and velocities."""
    times = trajectory.times
    if not times[0] - 1e-12 <= t <= times[-1] + 1e-12:
        raise ValueError(f"t={t} outside trajectory span [{times[0]}, {times[-1]}]")
    i = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
    h = times[i + 1] - times[i]
    theta = (t - times[i]) / h
    return _interpolate(trajectory, i, theta)


def _interpolate(trajectory, i, theta):
    m0 = trajectory.states[i].metric
    m1 = trajectory.states[i + 1].metric
    if theta == 0.0:
        return m0
    if theta == 1.0:
        return m1
    s = trajectory.s_samples[i]
    q0, q1 = _coords(m0), _coords(m1)
    v0, v1 = _rate(m0, q0, s), _rate(m1, q1, s)
    h = trajectory.states[i + 1].t - trajectory.states[i].t
    return _with_coords(m0, _hermite(q0, q1, v0, v1, h, theta))


# ---------------------------------------------------------------------------
# Conjugate f-equation
# ---------------------------------------------------------------------------

def _f_rate(metric, f, s):
    return (-metric.laplace_beltrami(f) + metric.gradient_norm_sq(f)
            - metric.scalar_curvature() + s)


def conjugate_f_solve(trajectory, f_terminal):
    """Integrate ``df/dt = -Delta f + |grad f|^2 - R (+ s)`` backward along ``trajectory``.

    The metric at RK stage midpoints comes from :func:`metric_at`'s Hermite
    interpolant. Returns ``f(t_i)`` aligned with ``trajectory.states``.
    """
    metrics = trajectory.metrics
    f = np.asarray(f_terminal, dtype=float)
    if f.shape != tuple(metrics[-1].shape):
        raise ValueError(f"f_terminal shape {f.shape} does not match metric {metrics[-1].shape}")
    if not np.all(np.isfinite(f)):
        raise ValueError("f_terminal has non-finite nodes")
    rescaled = trajectory.flow_kind != "ricci"

    out = [f]
    for i in range(len(metrics) - 2, -1, -1):
        m0, m1 = metrics[i], metrics[i + 1]
        h = trajectory.states[i + 1].t - trajectory.states[i].t
        _check_cfl(m0, h)
        _check_cfl(m1, h)
        s = float(trajectory.s_samples[i]) if rescaled else 0.0
        mid = _interpolate(trajectory, i, 0.5)
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = _f_rate(m1, f, s)
            k2 = _f_rate(mid, f - 0.5 * h * k1, s)
            k3 = _f_rate(mid, f - 0.5 * h * k2, s)
            k4 = _f_rate(m0, f - h * k3, s)
            f = f - (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(f)):
            raise BlowUp(f"f overflowed at t={trajectory.states[i].t:.6g}")
        out.append(f)
    out.reverse()
    return out


def weighted_mass(metric, f):
    """``int e^{-f} dmu``."""
    return integrate_field(metric, np.exp(-np.asarray(f, dtype=float)))
