"""Verification experiments and the suite runner.

Every ``check_*`` function returns a :class:`CheckResult` (or a list of them).
A check whose theorem hypothesis fails raises :class:`HypothesisUnmet`;
:func:`run_suite` turns that into a skipped result carrying the measured
quantity, and turns numerical failures into failed results naming the error.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import stats

from .errors import DomainExhausted, HypothesisUnmet, RicciLabError, TrajectoryTruncated
from .flow import (
    AverageScalar,
    Constant,
    FlowState,
    integrate,
    weighted_mass,
)
from .functionals import (
    F_k_forms,
    coupled_series,
    einstein_constant,
    einstein_residual,
    monitor,
    rhs_f_variation,
    rhs_lambda,
    rhs_rescaled_F,
    rhs_w_bar,
    rhs_w_variation,
)
from .geometry import ConformalTorus, RoundSphere, grid_coordinates, smooth_random_field
from .rescale import build_map, correspondence_check, round_trip, to_rescaled
from .spectral import DEFAULT_TOL, dense_lowest_eigenpair, eigenpairs, lambda_bar, lowest_eigenpair

logger = logging.getLogger(__name__)

DEFAULT_EPS = (1e-3, 5e-4, 2.5e-4)
ROUNDING_FLOOR = 1e-12
_DLAMBDA_FLOOR = 1e-7

ALL_CHECKS = (
    "operator_convergence",
    "integrator_order",
    "gauss_bonnet",
    "solver_oracle",
    "scale_invariance",
    "form_agreement",
    "first_variation",
    "sphere_eigenvalue_law",
    "dlambda_identity",
    "monotone",
    "normalized_flow",
    "coupled_monotone",
    "rescale_closed_forms",
    "round_trip",
    "correspondence",
)


# ---------------------------------------------------------------------------
# Result types
# ---------------------------------------------------------------------------

@dataclass
class CheckResult:
    """Outcome of one check.

    ``passed`` means ``|observed - expected| <= tolerance`` for equality
    checks, or the stated bound for inequality checks. Skipped checks count
    as passed.
    """

    name: str
    passed: bool
    observed: float
    expected: float
    tolerance: float
    details: str = ""
    skipped: bool = False
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


@dataclass
class RunReport:
    config: dict
    checks: list
    trajectories: dict = field(default_factory=dict)
    series: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c.passed]

    def to_dict(self):
        return {
            "passed": self.passed,
            "n_checks": len(self.checks),
            "n_failed": len(self.failures()),
            "n_skipped": sum(c.skipped for c in self.checks),
            "config": self.config,
            "trajectories": self.trajectories,
            "series": self.series,
            "checks": [c.to_dict() for c in self.checks],
        }


# ---------------------------------------------------------------------------
# Numerical helpers
# ---------------------------------------------------------------------------

def monotone_tolerance(values, solver_tol=DEFAULT_TOL):
    """Per-sample slack ``1e-7 (1 + |v|) + 10 * solver_tol`` for nondecreasing checks."""
    return 1e-7 * (1.0 + np.abs(np.asarray(values, dtype=float))) + 10.0 * solver_tol


def least_squares_order(h, err, floor=ROUNDING_FLOOR):
    """Slope of ``log err`` against ``log h`` and its standard error.

    Levels with ``err <= floor`` are dropped. Returns ``(nan, nan, n_used)``
    when fewer than two levels remain.
    """
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    keep = err > floor
    n_used = int(keep.sum())
    if n_used < 2:
        return math.nan, math.nan, n_used
    fit = stats.linregress(np.log(h[keep]), np.log(err[keep]))
    stderr = float(fit.stderr) if n_used > 2 else 0.0
    return float(fit.slope), stderr, n_used


def _order_ok(order, minimum):
    return math.isnan(order) or order >= minimum


def _coupled_perturbation(metric, f, eps):
    """``(g, f)`` moved by ``eps`` along ``dg = -2 Ric``, ``df = -Delta f + |grad f|^2 - R``."""
    R = metric.scalar_curvature()
    df = -metric.laplace_beltrami(f) + metric.gradient_norm_sq(f) - R
    if isinstance(metric, RoundSphere):
        g = RoundSphere(metric.n, metric.r2 - 2.0 * (metric.n - 1) * eps)
    else:
        g = metric.with_u(metric.u - 0.5 * eps * R)
    return g, f + eps * df


def _normalized_weight(metric, f):
    """Shift ``f`` so that ``int e^{-f} dmu = 1``."""
    return f + math.log(weighted_mass(metric, f))


# ---------------------------------------------------------------------------
# Identity checks
# ---------------------------------------------------------------------------

def check_first_variation(metric, f, k, eps_seq=DEFAULT_EPS, name="first_variation"):
    """Central-difference dF_k/deps along the coupled direction against ``rhs_f_variation``."""
    eps_seq = tuple(sorted(eps_seq, reverse=True))
    expected = rhs_f_variation(metric, f, k)
    derivs = []
    for eps in eps_seq:
        gp, fp = _coupled_perturbation(metric, f, eps)
        gm, fm = _coupled_perturbation(metric, f, -eps)
        derivs.append((F_k_forms(gp, fp, k)[0] - F_k_forms(gm, fm, k)[0]) / (2.0 * eps))
    derivs = np.array(derivs)
    scale = max(abs(expected), 1e-12)
    errors = np.abs(derivs - expected) / scale
    order, stderr, used = least_squares_order(eps_seq, errors)
    passed = bool(errors[-1] <= 1e-4 and _order_ok(order, 1.8))
    return CheckResult(
        name, passed, float(derivs[-1]), float(expected), 1e-4 * scale,
        details=f"relative errors {np.array2string(errors, precision=3)}; order {order:.3f}",
        extra={"eps": list(eps_seq), "errors": errors.tolist(), "order": order,
               "order_stderr": stderr, "levels_used": used},
    )


def _dlambda_error(trajectory, k, tol):
    if len(trajectory) < 3:
        raise ValueError("dlambda check needs at least 3 states")
    results = eigenpairs(trajectory.metrics, k, tol=tol)
    lam = np.array([r.lam for r in results])
    t = trajectory.times
    fd = (lam[2:] - lam[:-2]) / (t[2:] - t[:-2])
    rescaled = trajectory.flow_kind != "ricci"
    rhs = np.array([
        rhs_lambda(trajectory.states[i].metric, results[i], k,
                   float(trajectory.s_samples[i]) if rescaled else 0.0)
        for i in range(1, len(trajectory) - 1)
    ])
    scale = max(float(np.abs(rhs).max()), 1e-9 * (1.0 + float(np.abs(lam).max())))
    second = (lam[2:] - 2.0 * lam[1:-1] + lam[:-2]) / np.diff(t)[1:] ** 2
    return float(np.abs(fd - rhs).max() / scale), fd, rhs, float(np.abs(second).max())


def check_dlambda_identity(trajectory, k, provider=None, refined=None, tol=DEFAULT_TOL,
                           name="dlambda_identity"):
    """Central-difference dlam/dt at interior states against ``rhs_lambda``.

    ``refined`` is an optional run of the same flow with half the step; when
    given, the error must shrink at order >= 1 unless both errors sit at the
    solver floor.
    """
    err, fd, rhs, curvature = _dlambda_error(trajectory, k, tol)
    extra = {"max_relative_error": err, "lambda_second_difference": curvature,
             "provider": provider.describe() if provider is not None else "s=0"}
    order = math.nan
    if refined is not None:
        err_fine = _dlambda_error(refined, k, tol)[0]
        extra["refined_error"] = err_fine
        if err > _DLAMBDA_FLOOR and err_fine > _DLAMBDA_FLOOR:
            order = math.log2(err / err_fine)
        extra["order"] = order
    passed = bool(err <= 1e-3 and _order_ok(order, 1.0))
    i = int(np.argmax(np.abs(fd - rhs)))
    return CheckResult(
        name, passed, float(fd[i]), float(rhs[i]), 1e-3,
        details=f"max relative error {err:.3g}" + (
            f", order {order:.2f}" if not math.isnan(order) else ""),
        extra=extra,
    )


# ---------------------------------------------------------------------------
# Monotonicity
# ---------------------------------------------------------------------------

def check_monotone(series, solver_tol=DEFAULT_TOL, hypothesis=None, einstein=None,
                   name=None):
    """Nondecreasing within ``monotone_tolerance``.

    Parameters
    ----------
    series : MonitorSeries
    hypothesis : tuple, optional
        ``(reason, measured, holds)``; when ``holds`` is false the check raises
        :class:`HypothesisUnmet`.
    einstein : float, optional
        Terminal Einstein residual, attached for the strictness report.
    """
    name = name or f"monotone[{series.name},k={series.k:g}]"
    if hypothesis is not None:
        reason, measured, holds = hypothesis
        if not holds:
            raise HypothesisUnmet(reason, measured)
    values = np.asarray(series.values, dtype=float)
    if values.size < 2:
        raise ValueError("monotone check needs at least 2 samples")
    steps = np.diff(values)
    slack = monotone_tolerance(values[:-1], solver_tol)
    margin = steps + slack
    worst = int(np.argmin(margin))
    passed = bool(np.all(margin >= 0))
    extra = {
        "strict": bool(np.all(steps > slack)),
        "violations": int(np.sum(margin < 0)),
        "first": float(values[0]),
        "last": float(values[-1]),
        "params": dict(series.params),
    }
    if einstein is not None:
        extra["einstein_residual"] = float(einstein)
    details = "nondecreasing" if passed else f"{extra['violations']} decreasing step(s)"
    if series.params.get("tau0_user_set"):
        details += f"; tau0={series.params['tau0']:g} user-set"
    return CheckResult(name, passed, float(steps[worst]), 0.0, float(slack[worst]),
                       details=details, extra=extra)


def _terminal_einstein(trajectory):
    metric = trajectory.final.metric
    return einstein_residual(metric, einstein_constant(metric))


def scan_monotone(trajectory, k, tau0=None, tol=DEFAULT_TOL, workers=1, label=""):
    """Monotonicity results for the series that apply to ``trajectory``."""
    series = monitor(trajectory, k, tau0=tau0, tol=tol, workers=workers)
    einstein = _terminal_einstein(trajectory)
    s = trajectory.s_samples[0] if trajectory.flow_kind != "ricci" else 0.0
    out = []
    for ser in series:
        name = f"monotone[{ser.name},{label},k={k:g}]"
        hypothesis = None
        if ser.name == "M1" and trajectory.flow_kind != "ricci":
            mean_s = float(np.max(trajectory.s_samples))
            hypothesis = ("s <= 0 required for the rescaled flow", mean_s, mean_s <= 1e-8)
        elif ser.name == "M4" and trajectory.flow_kind != "ricci":
            continue
        elif ser.name == "M3" and trajectory.flow_kind == "ricci":
            continue
        out.append(_guarded(name, check_monotone, ser, tol, hypothesis, einstein, name))
    logger.debug("monotone scan %s k=%g (s=%g): %d series", label, k, s, len(out))
    return out


def _w_rate_identity(trajectory, ser, fs, k, label, rtol=1e-3):
    """Centred difference of W_k or Wbar_k against its right-hand side at interior states."""
    t = ser.times - ser.times[0]
    fd = (ser.values[2:] - ser.values[:-2]) / (t[2:] - t[:-2])
    metrics, n = trajectory.metrics, trajectory.n
    interior = range(1, len(t) - 1)
    if ser.name == "W_k":
        tau0 = ser.params["tau0"]
        rhs = np.array([rhs_w_variation(metrics[i], fs[i], tau0 + t[i], k, n) for i in interior])
    else:
        s = ser.params["s"]
        rhs = np.array([rhs_w_bar(metrics[i], fs[i], s, t[i], k, n) for i in interior])
    scale = max(float(np.abs(rhs).max()), float(np.abs(fd).max()), 1e-12)
    err = float(np.abs(fd - rhs).max()) / scale
    return CheckResult(f"coupled[d{ser.name},{label},k={k:g}]", err <= rtol, err, 0.0, rtol,
                       details=f"centred difference at {len(rhs)} interior states",
                       extra={"max_rate": scale})


def check_coupled_monotone(trajectory, k, tau0=None, tol=DEFAULT_TOL, label=""):
    """F_k and W_k (Ricci) or Wbar_k (constant-s rescaled) along the coupled system.

    The W series is also differenced in time and compared with its
    right-hand side.
    """
    series, fs = coupled_series(trajectory, k, tau0=tau0)
    out = []
    for ser in series:
        if ser.name == "F_k" and trajectory.flow_kind != "ricci":
            continue
        out.append(check_monotone(ser, tol, name=f"coupled[{ser.name},{label},k={k:g}]"))
        if ser.name != "F_k" and len(ser) >= 3:
            out.append(_w_rate_identity(trajectory, ser, fs, k, label))
    masses = np.array([weighted_mass(m, f) for m, f in zip(trajectory.metrics, fs)])
    drift = float(np.abs(masses / masses[-1] - 1.0).max())
    out.append(CheckResult(
        f"coupled[weighted_mass,{label},k={k:g}]", drift <= 1e-6, drift, 0.0, 1e-6,
        details="int e^{-f} dmu conserved along the backward solve",
    ))
    return out


# ---------------------------------------------------------------------------
# Flows and correspondence
# ---------------------------------------------------------------------------

def check_gauss_bonnet(trajectory, name="gauss_bonnet"):
    """``int R dmu`` at every state: 0 on the torus, ``8 pi`` on the round 2-sphere."""
    metric0 = trajectory.states[0].metric
    if isinstance(metric0, RoundSphere) and metric0.n != 2:
        raise HypothesisUnmet("Gauss-Bonnet applies to surfaces", float(metric0.n))
    expected = 8.0 * math.pi if isinstance(metric0, RoundSphere) else 0.0
    worst, worst_tol, worst_value = -1.0, 0.0, 0.0
    passed = True
    for st in trajectory.states:
        m = st.metric
        R = m.scalar_curvature()
        total = float(np.sum(R * m.measure_weight()))
        tol = 1e-8 * max(1.0, float(np.max(np.abs(R))) * m.volume())
        dev = abs(total - expected)
        passed &= dev <= tol
        if dev / tol > worst:
            worst, worst_tol, worst_value = dev / tol, tol, total
    return CheckResult(name, bool(passed), worst_value, expected, worst_tol,
                       details=f"{len(trajectory)} states")


def check_integrator_order(Lx=1.0, Ly=1.0, grid=16, amplitude=0.3, mode=4, steps=20,
                           minimum=2.0, name="integrator_order"):
    """Terminal-state error of Ricci flow at ``dt`` and ``dt/2`` against a ``dt/8`` run.

    The sinusoidal torus uses mode ``mode`` on a ``grid`` x ``grid`` grid so that
    the step error sits well above rounding; ``dt`` is half the CFL bound.
    """
    metric = ConformalTorus.sinusoid(grid, grid, Lx, Ly, amplitude=amplitude,
                                     modes=((mode, 0), (0, mode)))
    dt = 0.5 * metric.cfl_bound()
    T = steps * dt
    start = FlowState(0.0, metric)
    runs = [integrate(start, T, h, "ricci") for h in (dt, dt / 2.0, dt / 8.0)]
    u_ref = runs[-1].final.metric.u
    h = np.array([run.dt for run in runs[:2]])
    err = np.array([float(np.abs(run.final.metric.u - u_ref).max()) for run in runs[:2]])
    order, _, used = least_squares_order(h, err)
    return CheckResult(name, used == 2 and order >= minimum, order, minimum, 0.0,
                       details=f"{grid}x{grid} sinusoid, mode {mode}, {steps} steps at dt",
                       extra={"errors": err.tolist(), "dt": h.tolist()})


def check_normalized_flow(metric, T, dt, k, tol=DEFAULT_TOL, name="normalized_flow"):
    """Average-scalar provider: ``s`` stays at the average curvature, volume is preserved, lam grows."""
    trajectory = integrate(FlowState(0.0, metric), T, dt, "normalized", AverageScalar())
    out = [check_gauss_bonnet(trajectory, name=f"{name}[gauss_bonnet]")]
    volumes = np.array([m.volume() for m in trajectory.metrics])
    drift = float(np.abs(volumes / volumes[0] - 1.0).max())
    out.append(CheckResult(f"{name}[volume]", drift <= 1e-6, drift, 0.0, 1e-6,
                           details=f"{len(trajectory)} states"))
    if isinstance(metric, ConformalTorus):
        scale = max(1.0, float(np.abs(metric.scalar_curvature()).max()))
        s_max = float(np.abs(trajectory.s_samples).max())
        out.append(CheckResult(f"{name}[s]", s_max <= 1e-8 * scale, s_max, 0.0, 1e-8 * scale,
                               details="average scalar curvature vanishes on the torus"))
    avg = float(np.max(trajectory.s_samples))
    series = monitor(trajectory, k, tol=tol)[0]
    out.append(_guarded(
        f"{name}[M1,k={k:g}]", check_monotone, series, tol,
        ("average scalar curvature must be nonpositive", avg, avg <= 1e-8),
        _terminal_einstein(trajectory), f"{name}[M1,k={k:g}]",
    ))
    return out


def check_sphere_eigenvalue_law(ks=(1.0, 2.0, 5.0), n=2, r2=1.0, T=0.4, dt=0.01,
                                name="sphere_eigenvalue_law"):
    """``lam(t) = k n (n-1) / (r2 - 2(n-1) t)`` along Ricci flow of a round sphere."""
    trajectory = integrate(FlowState(0.0, RoundSphere(n, r2)), T, dt, "ricci")
    out = []
    for k in ks:
        worst, obs, exp = 0.0, 0.0, 0.0
        for st in trajectory.states:
            closed = k * n * (n - 1) / (r2 - 2.0 * (n - 1) * st.t)
            lam = lowest_eigenpair(st.metric, k).lam
            rel = abs(lam - closed) / closed
            if rel >= worst:
                worst, obs, exp = rel, lam, closed
        out.append(CheckResult(f"{name}[k={k:g}]", worst <= 1e-10, obs, exp, 1e-10 * exp,
                               details=f"max relative error {worst:.3g} over {len(trajectory)} states"))
    return out


def check_rescale_closed_forms(T=1.0, dt=0.01, name="rescale_closed_forms"):
    """``s = -1, n = 2``: ``phi = 1/(1+t)``, ``tbar = ln(1+t)``, ``tau = 4+t``; ``s = +1`` exhausts at ``t = 1``."""
    t = np.linspace(0.0, T, int(round(T / dt)) + 1)
    rmap = build_map(2, np.full(t.size, -1.0), t)
    errors = {
        "phi": float(np.abs(rmap.phi - 1.0 / (1.0 + t)).max()),
        "t_bar": float(np.abs(rmap.t_bar - np.log1p(t)).max()),
        "tau": float(np.abs(rmap.tau - (4.0 + t)).max()),
    }
    out = [CheckResult(f"{name}[{key}]", err <= 1e-10, err, 0.0, 1e-10) for key, err in errors.items()]

    t_long = np.linspace(0.0, 1.5, 151)
    try:
        build_map(2, np.ones(t_long.size), t_long)
        out.append(CheckResult(f"{name}[exhausted]", False, math.inf, 1.0, 1e-12,
                               details="DomainExhausted not raised"))
    except DomainExhausted as exc:
        out.append(CheckResult(f"{name}[exhausted]", abs(exc.t - 1.0) <= 1e-12, exc.t, 1.0, 1e-12,
                               details=f"map truncated to {len(exc.rescale_map)} samples"))
    return out


def check_round_trip(metric, f, phis=(1.0, 7.3, 1e-6), ks=(1.0, 2.0), name="round_trip"):
    """Exact inversion of the rescale map and ``F_k(g, f) = phi F_k(gbar, fbar)``."""
    out = []
    for phi in phis:
        err = round_trip(metric, f, phi)
        bound = 0.0 if phi == 1.0 else (1e-13 if phi >= 1e-3 else 1e-10)
        out.append(CheckResult(f"{name}[phi={phi:g}]", err <= bound, err, 0.0, bound))
    for phi in (0.5, 3.0):
        for k in ks:
            g_bar, f_bar = to_rescaled(metric, f, phi)
            direct = F_k_forms(metric, f, k)[0]
            mapped = phi * F_k_forms(g_bar, f_bar, k)[0]
            scale = max(abs(direct), 1e-300)
            rel = abs(direct - mapped) / scale
            out.append(CheckResult(f"{name}[F_k,phi={phi:g},k={k:g}]", rel <= 1e-10,
                                   mapped, direct, 1e-10 * scale))
    return out


def check_correspondence(initial, s_const, T, dt, k, tol=DEFAULT_TOL, refine=True,
                         name="correspondence"):
    """Direct rescaled run against the mapped Ricci run, ``lam`` scaling, and ``Wbar_k``."""
    if s_const == 0:
        raise ValueError("correspondence needs a nonzero constant s")
    label = f"{name}[s={s_const:g}]"
    ricci = integrate(FlowState(0.0, initial), T, dt, "ricci")
    report = correspondence_check(ricci, s_const)
    out = [CheckResult(f"{label}[metric]", report.max_error <= 1e-6, report.max_error, 0.0, 1e-6,
                       details=f"{len(report.errors)} resampled states")]

    if refine:
        fine = integrate(FlowState(0.0, initial), T, dt / 2.0, "ricci")
        err_fine = correspondence_check(fine, s_const).max_error
        order = (math.log2(report.max_error / err_fine)
                 if report.max_error > 1e-10 and err_fine > 1e-10 else math.nan)
        out.append(CheckResult(f"{label}[order]", _order_ok(order, 2.0), order, 2.0, 0.0,
                               details=f"errors {report.max_error:.3g} -> {err_fine:.3g}",
                               extra={"errors": [report.max_error, err_fine]}))

    picks = sorted({0, len(ricci) // 2, len(ricci) - 1})
    worst = 0.0
    for i in picks:
        phi = float(report.rescale_map.phi[i])
        g_bar, _ = to_rescaled(ricci.states[i].metric, None, phi)
        lam = lowest_eigenpair(ricci.states[i].metric, k, tol=tol).lam
        lam_bar = lowest_eigenpair(g_bar, k, tol=tol).lam
        worst = max(worst, abs(lam_bar - lam / phi) / max(abs(lam / phi), 1e-9))
    out.append(CheckResult(f"{label}[lambda_scaling]", worst <= 1e-8, worst, 0.0, 1e-8))

    for result in check_coupled_monotone(report.direct, k, tol=tol, label=f"s={s_const:g}"):
        result.name = f"{label}[{result.name}]"
        out.append(result)
    return out


# ---------------------------------------------------------------------------
# Operators and solver
# ---------------------------------------------------------------------------

def _closed_forms(nx, Lx, Ly, amplitude):
    """``u = a sin(ax) + a cos(by)``, ``f = sin(ax) cos(by)`` and their exact curvature quantities."""
    x, y = grid_coordinates(nx, nx, Lx, Ly)
    al, be = 2.0 * np.pi / Lx, 2.0 * np.pi / Ly
    sx, cx, sy, cy = np.sin(al * x), np.cos(al * x), np.sin(be * y), np.cos(be * y)
    u = amplitude * (sx + cy)
    ux, uy = amplitude * al * cx, -amplitude * be * sy
    lap_u = -amplitude * (al**2 * sx + be**2 * cy)
    f = sx * cy
    fx, fy = al * cx * cy, -be * sx * sy
    fxx, fyy, fxy = -al**2 * f, -be**2 * f, -al * be * cx * sy
    e2u = np.exp(2.0 * u)
    exact = {
        "R": -2.0 * lap_u / e2u,
        "laplace_beltrami": (fxx + fyy) / e2u,
        "hessian": np.stack([fxx - ux * fx + uy * fy,
                             fxy - uy * fx - ux * fy,
                             fyy + ux * fx - uy * fy]),
    }
    return u, f, exact


def check_operator_convergence(levels=(64, 128, 256), Lx=1.0, Ly=1.0, amplitude=0.2,
                               name="operator_convergence"):
    """Second-order convergence of the central scheme against closed forms."""
    errors = {key: [] for key in ("R", "laplace_beltrami", "hessian")}
    for nx in levels:
        u, f, exact = _closed_forms(nx, Lx, Ly, amplitude)
        metric = ConformalTorus(u, Lx, Ly, scheme="central")
        hess = metric.hessian(f)
        computed = {
            "R": metric.scalar_curvature(),
            "laplace_beltrami": metric.laplace_beltrami(f),
            "hessian": np.stack([hess.xx, hess.xy, hess.yy]),
        }
        for key in errors:
            errors[key].append(float(np.abs(computed[key] - exact[key]).max()
                                     / np.abs(exact[key]).max()))
    h = [Lx / nx for nx in levels]
    out = []
    for key, errs in errors.items():
        order, stderr, used = least_squares_order(h, errs)
        out.append(CheckResult(
            f"{name}[{key}]", _order_ok(order, 1.95) and used >= 2, order, 2.0, 0.05,
            details=f"errors {', '.join(f'{e:.3g}' for e in errs)}",
            extra={"errors": errs, "order": order, "order_stderr": stderr, "levels": list(levels)},
        ))
    return out


def check_solver_oracle(rng, n_samples=20, grid=24, Lx=1.0, Ly=1.0, ks=(1.0, 2.0, 5.0),
                        tol=DEFAULT_TOL, sinusoid_grid=None, name="solver_oracle"):
    """Iterative lowest eigenvalue against the dense solve.

    ``n_samples`` random metrics on ``grid``; with ``sinusoid_grid`` one more
    comparison on the sinusoidal torus of that size at ``ks[0]``.
    """
    flat = ConformalTorus.flat(grid, grid, Lx, Ly)
    cases = []
    for i in range(n_samples):
        cases.append((flat.with_u(smooth_random_field(flat, rng, amplitude=0.3)), ks[i % len(ks)]))
    details = f"{n_samples} random metrics on {grid}x{grid}"
    if sinusoid_grid is not None:
        cases.append((ConformalTorus.sinusoid(sinusoid_grid, sinusoid_grid, Lx, Ly, amplitude=0.1,
                                              modes=((1, 0), (0, 1))), ks[0]))
        details += f", sinusoid on {sinusoid_grid}x{sinusoid_grid}"
    worst, obs, exp = 0.0, 0.0, 0.0
    for metric, k in cases:
        lam = lowest_eigenpair(metric, k, tol=tol).lam
        ref = dense_lowest_eigenpair(metric, k).lam
        rel = abs(lam - ref) / max(1.0, abs(ref))
        if rel >= worst:
            worst, obs, exp = rel, lam, ref
    return CheckResult(name, worst <= 1e-8, obs, exp, 1e-8 * max(1.0, abs(exp)),
                       details=details, extra={"max_relative_error": worst})


def check_scale_invariance(metric, ks=(1.0, 2.0, 5.0), factors=(0.5, 2.0, 10.0),
                           tol=DEFAULT_TOL, name="scale_invariance"):
    """``lambda_bar(c g) = lambda_bar(g)`` for each factor and ``k``."""
    out = []
    family = "sphere" if isinstance(metric, RoundSphere) else "torus"
    for k in ks:
        base = lambda_bar(metric, k, lowest_eigenpair(metric, k, tol=tol))
        worst, obs = 0.0, base
        for c in factors:
            scaled = metric.scaled(c)
            value = lambda_bar(scaled, k, lowest_eigenpair(scaled, k, tol=tol))
            rel = abs(value - base) / max(abs(base), 1e-9)
            if rel >= worst:
                worst, obs = rel, value
        out.append(CheckResult(f"{name}[{family},k={k:g}]", worst <= 1e-9, obs, base,
                               1e-9 * max(abs(base), 1e-9)))
    return out


def check_form_agreement(rng, n_samples=100, grid=32, Lx=1.0, Ly=1.0, ks=(1.0, 2.0, 5.0),
                         name="form_agreement"):
    """F_k gradient vs Laplacian forms, and the two rescaled right-hand sides, on random inputs."""
    flat = ConformalTorus.flat(grid, grid, Lx, Ly)
    worst_f, worst_r = 0.0, 0.0
    for i in range(n_samples):
        metric = flat.with_u(smooth_random_field(flat, rng, amplitude=0.3))
        f = _normalized_weight(metric, smooth_random_field(flat, rng, amplitude=0.5))
        k = ks[i % len(ks)]
        s = -5.0 * rng.uniform()
        grad, lap = F_k_forms(metric, f, k)
        worst_f = max(worst_f, abs(grad - lap) / max(abs(grad), abs(lap), 1e-12))
        form_a, form_b = rhs_rescaled_F(metric, f, k, s, tol=math.inf)
        worst_r = max(worst_r, abs(form_a - form_b) / max(abs(form_a), abs(form_b), 1.0))
    return [
        CheckResult(f"{name}[F_k]", worst_f <= 1e-9, worst_f, 0.0, 1e-9,
                    details=f"{n_samples} random (u, f)"),
        CheckResult(f"{name}[rescaled_F]", worst_r <= 1e-9, worst_r, 0.0, 1e-9,
                    details=f"{n_samples} random (u, f) with unit weighted measure"),
    ]


# ---------------------------------------------------------------------------
# Suite
# ---------------------------------------------------------------------------

RUNTIME_ERRORS = ("StabilityViolation", "BlowUp", "TrajectoryTruncated",
                  "SolverNoConvergence", "DomainExhausted", "FormMismatch",
                  "NonPositiveEigenfunction")


def _error_result(name, exc):
    return CheckResult(name, False, math.nan, math.nan, math.nan,
                       details=f"{type(exc).__name__}: {exc}",
                       extra={"error": type(exc).__name__})


def _guarded(name, fn, *args, **kwargs):
    """Run one check; hypothesis failures become skips, library errors become failures."""
    try:
        return fn(*args, **kwargs)
    except HypothesisUnmet as exc:
        logger.warning("%s skipped: %s", name, exc)
        return CheckResult(name, True, exc.measured, math.nan, math.nan,
                           details=f"skipped: {exc.reason}", skipped=True,
                           extra={"measured": exc.measured})
    except RicciLabError as exc:
        logger.warning("%s failed: %s", name, exc)
        return _error_result(name, exc)


def _flatten(items):
    out = []
    for item in items:
        if isinstance(item, list):
            out.extend(_flatten(item))
        else:
            out.append(item)
    return out


class _Trajectories:
    """Flows shared by several checks, integrated once and cached with their errors."""

    def __init__(self, config):
        self.config = config
        self.runs = {}

    def get(self, label):
        if label not in self.runs:
            self.runs[label] = self._integrate(label)
        run = self.runs[label]
        if isinstance(run, Exception):
            raise run
        return run

    def _integrate(self, label):
        cfg = self.config
        initial = FlowState(0.0, cfg.initial_metric())
        try:
            if label == "ricci":
                return integrate(initial, cfg.flow.T, cfg.flow.dt, "ricci",
                                 progress=cfg.run.progress)
            s = float(label.split("=")[1])
            return integrate(initial, cfg.flow.T, cfg.flow.dt, "rescaled", Constant(s),
                             progress=cfg.run.progress)
        except TrajectoryTruncated as exc:
            logger.warning("%s trajectory truncated: %s", label, exc.reason)
            return exc
        except RicciLabError as exc:
            return exc

    def summary(self):
        out = {}
        for label, run in self.runs.items():
            if isinstance(run, Exception):
                out[label] = {"error": f"{type(run).__name__}: {run}"}
            else:
                out[label] = {
                    "flow_kind": run.flow_kind,
                    "steps": len(run) - 1,
                    "dt": run.dt,
                    "T": float(run.times[-1] - run.times[0]),
                    "provider": run.provider.describe() if run.provider else "s=0",
                    "truncated": run.truncated,
                }
        return out


def _labels(config):
    labels = ["ricci"]
    labels += [f"s={s:g}" for s in config.sweep.s_values if s != 0]
    return labels


def _default_tau0(config):
    if config.flow.tau0 is not None:
        return config.flow.tau0
    negative = [s for s in config.sweep.s_values if s < 0]
    n = config.initial_metric().n
    return -2.0 * n / negative[0] if negative else 1.0


def _suite_tasks(config, runs, rng_for):
    cfg = config
    checks = cfg.checks
    tol = cfg.spectral.tol
    ks = cfg.spectral.ks
    metric = cfg.initial_metric()
    identity = cfg.identity_metric()
    sphere = isinstance(metric, RoundSphere)
    tau0 = _default_tau0(cfg)
    tau0_user = cfg.flow.tau0 is not None
    tasks = []

    def add(group, label, fn, *args, **kwargs):
        if group in checks.enabled:
            tasks.append((f"{group}[{label}]" if label else group, fn, args, kwargs))

    def with_run(label, fn, *args, **kwargs):
        # a failed shared run surfaces through _guarded under the task name
        def task():
            return fn(runs.get(label), *args, **kwargs)
        return task

    if not sphere:
        add("operator_convergence", "", check_operator_convergence,
            checks.convergence_levels, metric.Lx, metric.Ly)
        add("integrator_order", "", check_integrator_order, metric.Lx, metric.Ly)
        add("solver_oracle", "", check_solver_oracle, rng_for(cfg.run.seed, "solver_oracle"),
            checks.oracle_samples, checks.oracle_grid, metric.Lx, metric.Ly, ks, tol,
            checks.oracle_sinusoid_grid)
        add("form_agreement", "", check_form_agreement, rng_for(cfg.run.seed, "form_agreement"),
            checks.form_samples, metric.nx, metric.Lx, metric.Ly, ks)

    for label in _labels(cfg):
        add("gauss_bonnet", label, with_run(
            label, check_gauss_bonnet, name=f"gauss_bonnet[{label}]"))

    add("scale_invariance", "metric", check_scale_invariance, metric, ks, tol=tol)
    add("scale_invariance", "sphere", check_scale_invariance, RoundSphere(2, 1.0), ks, tol=tol)

    fv_rng = rng_for(cfg.run.seed, "first_variation")
    f_identity = smooth_random_field(identity, fv_rng)
    add("first_variation", "metric", check_first_variation, identity, f_identity, 2.0,
        checks.eps_seq, name="first_variation[metric,k=2]")
    add("first_variation", "sphere", check_first_variation, RoundSphere(2, 1.0),
        np.float64(math.log(4.0 * math.pi)), 1.0, checks.eps_seq,
        name="first_variation[sphere,k=1]")

    add("sphere_eigenvalue_law", "", check_sphere_eigenvalue_law, ks)

    def dlambda(k):
        cfl = identity.cfl_bound()
        dt = 0.5 * cfl if math.isfinite(cfl) else 0.005
        T = checks.dlambda_steps * dt
        provider = Constant(-1.0)
        start = FlowState(0.0, identity)
        coarse = integrate(start, T, dt, "rescaled", provider)
        fine = integrate(start, T, dt / 2.0, "rescaled", provider)
        return check_dlambda_identity(coarse, k, provider, fine, tol,
                                      name=f"dlambda_identity[s=-1,k={k:g}]")

    for k in ks[:2]:
        add("dlambda_identity", f"k={k:g}", dlambda, k)
    add("dlambda_identity", "sphere", lambda: check_dlambda_identity(
        integrate(FlowState(0.0, RoundSphere(2, 1.0)), 0.2, 0.005, "ricci"), 1.0,
        tol=tol, name="dlambda_identity[sphere,k=1]"))

    for label in _labels(cfg):
        for k in ks:
            add("monotone", f"{label},k={k:g}", with_run(
                label, scan_monotone, k, tau0 if label == "ricci" else None, tol,
                cfg.run.workers, label))
            add("coupled_monotone", f"{label},k={k:g}", with_run(
                label, check_coupled_monotone, k, tau0 if label == "ricci" else None, tol, label))

    add("normalized_flow", "", check_normalized_flow, metric, cfg.flow.T, cfg.flow.dt, ks[0], tol)
    add("rescale_closed_forms", "", check_rescale_closed_forms)
    f_rt = (np.float64(0.3) if sphere
            else smooth_random_field(metric, rng_for(cfg.run.seed, "round_trip")))
    add("round_trip", "", check_round_trip, metric, f_rt, ks=ks[:2])

    for s in cfg.sweep.s_values:
        if s != 0:
            add("correspondence", f"s={s:g}", check_correspondence, metric, s,
                cfg.flow.T, cfg.flow.dt, ks[0], tol)

    if tau0_user:
        logger.debug("M2 uses user-set tau0=%g", tau0)
    return tasks


def run_suite(config, rng_for=None):
    """Run the configured checks and assemble a :class:`RunReport`.

    Checks run on ``config.run.workers`` threads; results keep submission order.
    """
    if rng_for is None:
        from .config import rng_for
    runs = _Trajectories(config)
    tasks = _suite_tasks(config, runs, rng_for)
    logger.debug("running %d check task(s) on %d worker(s)", len(tasks), config.run.workers)

    # trajectories are shared; integrate them before fanning out
    needed = {"gauss_bonnet", "monotone", "coupled_monotone"} & set(config.checks.enabled)
    if needed:
        for label in _labels(config):
            try:
                runs.get(label)
            except RicciLabError:
                pass

    def execute(task):
        name, fn, args, kwargs = task
        return _flatten([_guarded(name, fn, *args, **kwargs)])

    if config.run.workers > 1:
        with ThreadPoolExecutor(max_workers=config.run.workers) as executor:
            futures = [executor.submit(execute, task) for task in tasks]
            results = [future.result() for future in futures]
    else:
        results = [execute(task) for task in tasks]

    checks = _flatten(results)
    series = {}
    for c in checks:
        if c.name.startswith("monotone[") and not c.skipped and "first" in c.extra:
            series[c.name] = {"first": c.extra["first"], "last": c.extra["last"],
                              "min_step": c.observed, "strict": c.extra["strict"]}
    report = RunReport(config.to_dict(), checks, runs.summary(), series)
    logger.debug("suite finished: %d checks, %d failed, %d skipped", len(checks),
                len(report.failures()), sum(c.skipped for c in checks))
    return report
