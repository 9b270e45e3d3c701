"""Compact Riemannian metrics and the differential operators on them.

Two families are supported:

* :class:`ConformalTorus` -- ``g = e^{2u}(dx^2 + dy^2)`` on a flat periodic
  grid. All derivatives are Fourier multipliers; ``scheme`` selects the
  symbol (second-order central differences or pseudo-spectral).
* :class:`RoundSphere` -- the closed-form family of round n-spheres, on which
  every field is a constant and every symmetric tensor a multiple of ``g``.

The module-level functions (:func:`scalar_curvature`, :func:`ricci`, ...)
dispatch to the metric's own methods, so callers can stay family-agnostic.
"""

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from scipy import fft
from scipy.special import gamma

from .errors import InvalidMetric

SCHEMES = ("central", "spectral")
MIN_GRID = 8


# ---------------------------------------------------------------------------
# Tensor fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Covariant symmetric 2-tensor on the torus grid (``T_xx, T_xy, T_yy``)."""

    xx: np.ndarray
    xy: np.ndarray
    yy: np.ndarray

    __array_ufunc__ = None

    def __add__(self, other):
        return SymTensorField(self.xx + other.xx, self.xy + other.xy, self.yy + other.yy)

    def __sub__(self, other):
        return SymTensorField(self.xx - other.xx, self.xy - other.xy, self.yy - other.yy)

    def __mul__(self, c):
        return SymTensorField(c * self.xx, c * self.xy, c * self.yy)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class IsotropicTensor:
    """A tensor ``coef * g`` on a homogeneous metric."""

    coef: float

    __array_ufunc__ = None

    def __add__(self, other):
        return IsotropicTensor(self.coef + other.coef)

    def __sub__(self, other):
        return IsotropicTensor(self.coef - other.coef)

    def __mul__(self, c):
        return IsotropicTensor(c * self.coef)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# Derivative symbols
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _symbols(n, length, scheme):
    """First- and second-derivative Fourier symbols on a periodic 1D grid."""
    h = length / n
    k = 2.0 * np.pi * fft.fftfreq(n, d=h)
    if scheme == "central":
        d1 = 1j * np.sin(k * h) / h
        d2 = -(2.0 - 2.0 * np.cos(k * h)) / h**2
    else:
        d1 = 1j * k
        if n % 2 == 0:
            # the Nyquist mode has no real derivative
            d1[n // 2] = 0.0
        d2 = -k**2
    d1.flags.writeable = False
    d2.flags.writeable = False
    return d1, d2


def _frozen(a):
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


# ---------------------------------------------------------------------------
# Conformal torus
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ConformalTorus:
    """Metric ``e^{2u}(dx^2 + dy^2)`` on ``[0, Lx) x [0, Ly)`` with periodic ``u``.

    Parameters
    ----------
    u : numpy.ndarray
        Log-conformal factor at the grid nodes, shape ``(nx, ny)``; axis 0 is x.
    Lx, Ly : float
        Period lengths.
    scheme : str
        ``"spectral"`` (default) or ``"central"``.
    """

    u: np.ndarray
    Lx: float = 1.0
    Ly: float = 1.0
    scheme: str = "spectral"

    n = 2

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2:
            raise InvalidMetric(f"u must be a 2D grid, got shape {u.shape}")
        if min(u.shape) < MIN_GRID:
            raise InvalidMetric(f"grid {u.shape} is smaller than {MIN_GRID}x{MIN_GRID}")
        if not (self.Lx > 0 and self.Ly > 0):
            raise InvalidMetric(f"periods must be positive, got Lx={self.Lx}, Ly={self.Ly}")
        if not np.isfinite(u).all():
            raise InvalidMetric("u has non-finite nodes")
        if self.scheme not in SCHEMES:
            raise InvalidMetric(f"unknown scheme '{self.scheme}', expected one of {SCHEMES}")
        object.__setattr__(self, "u", _frozen(u))

    # -- construction -------------------------------------------------------

    @classmethod
    def flat(cls, nx, ny, Lx=1.0, Ly=1.0, scheme="spectral"):
        return cls(np.zeros((nx, ny)), Lx, Ly, scheme)

    @classmethod
    def sinusoid(cls, nx, ny, Lx=1.0, Ly=1.0, amplitude=0.1, modes=((1, 0),),
                 scheme="spectral"):
        """Torus with ``u = amplitude * sum sin(2 pi (mx x/Lx + my y/Ly))``."""
        x, y = grid_coordinates(nx, ny, Lx, Ly)
        u = np.zeros((nx, ny))
        for mx, my in modes:
            u += np.sin(2.0 * np.pi * (mx * x / Lx + my * y / Ly))
        return cls(amplitude * u, Lx, Ly, scheme)

    def with_u(self, u):
        return ConformalTorus(u, self.Lx, self.Ly, self.scheme)

    def scaled(self, c):
        """The homothetic metric ``c * g``."""
        return self.with_u(self.u + 0.5 * math.log(c))

    # -- grid ---------------------------------------------------------------

    @property
    def nx(self):
        return self.u.shape[0]

    @property
    def ny(self):
        return self.u.shape[1]

    @property
    def hx(self):
        return self.Lx / self.nx

    @property
    def hy(self):
        return self.Ly / self.ny

    @property
    def shape(self):
        return self.u.shape

    @cached_property
    def _multipliers(self):
        d1x, d2x = _symbols(self.nx, float(self.Lx), self.scheme)
        d1y, d2y = _symbols(self.ny, float(self.Ly), self.scheme)
        return {
            "x": d1x[:, None],
            "y": d1y[None, :],
            "xx": d2x[:, None],
            "yy": d2y[None, :],
            "xy": d1x[:, None] * d1y[None, :],
            "lap": d2x[:, None] + d2y[None, :],
        }

    def _derivatives(self, field, *which):
        field = self._check_field(field)
        spectrum = fft.fft2(field)
        m = self._multipliers
        return [fft.ifft2(spectrum * m[w]).real for w in which]

    def _check_field(self, field):
        field = np.asarray(field, dtype=float)
        if field.shape != self.shape:
            raise ValueError(f"field shape {field.shape} does not match grid {self.shape}")
        return field

    # -- flat operators -----------------------------------------------------

    def flat_laplacian(self, field):
        """``Delta_0 field`` for the flat metric ``dx^2 + dy^2``."""
        return self._derivatives(field, "lap")[0]

    def flat_gradient(self, field):
        return tuple(self._derivatives(field, "x", "y"))

    # -- metric quantities --------------------------------------------------

    @cached_property
    def conformal_weight(self):
        """``e^{2u}`` at the nodes."""
        return _frozen(np.exp(2.0 * self.u))

    @cached_property
    def _grad_u(self):
        return tuple(_frozen(d) for d in self.flat_gradient(self.u))

    @cached_property
    def _curvature(self):
        return _frozen(-2.0 * self.flat_laplacian(self.u) / self.conformal_weight)

    def scalar_curvature(self):
        return self._curvature

    def ricci(self):
        half = 0.5 * self._curvature * self.conformal_weight
        return SymTensorField(half, np.zeros(self.shape), half)

    def metric_tensor(self):
        w = self.conformal_weight
        return SymTensorField(w, np.zeros(self.shape), w)

    def laplace_beltrami(self, field):
        return self.flat_laplacian(field) / self.conformal_weight

    def gradient_norm_sq(self, field):
        fx, fy = self.flat_gradient(field)
        return (fx**2 + fy**2) / self.conformal_weight

    def gradient_inner(self, f, phi):
        fx, fy = self.flat_gradient(f)
        px, py = self.flat_gradient(phi)
        return (fx * px + fy * py) / self.conformal_weight

    def hessian(self, field):
        """Covariant Hessian using the Christoffel symbols of ``e^{2u}(flat)``."""
        fx, fy, fxx, fxy, fyy = self._derivatives(field, "x", "y", "xx", "xy", "yy")
        ux, uy = self._grad_u
        return SymTensorField(
            fxx - ux * fx + uy * fy,
            fxy - uy * fx - ux * fy,
            fyy + ux * fx - uy * fy,
        )

    def tensor_norm_sq(self, tensor):
        return (tensor.xx**2 + 2.0 * tensor.xy**2 + tensor.yy**2) / self.conformal_weight**2

    def trace(self, tensor):
        return (tensor.xx + tensor.yy) / self.conformal_weight

    def measure_weight(self):
        return self.conformal_weight * (self.hx * self.hy)

    def volume(self):
        return float(np.sum(self.measure_weight()))

    def stiffness(self, field):
        """``-Delta_0 field * hx * hy``: the discrete Dirichlet form's operator."""
        return -self.flat_laplacian(field) * (self.hx * self.hy)

    def cfl_bound(self):
        """Largest admissible explicit step, ``0.2 h^2 min(e^{2u}) / 4``."""
        h = min(self.hx, self.hy)
        return 0.2 * h**2 * float(self.conformal_weight.min()) / 4.0

    def constant_field(self, value):
        return np.full(self.shape, float(value))

    def summary(self):
        return {
            "family": "torus",
            "nx": self.nx,
            "ny": self.ny,
            "Lx": self.Lx,
            "Ly": self.Ly,
            "scheme": self.scheme,
            "u_max_abs": float(np.abs(self.u).max()),
        }


def grid_coordinates(nx, ny, Lx, Ly):
    """Node coordinates ``(x, y)`` of an ``nx x ny`` periodic grid (``ij`` indexing)."""
    x = np.arange(nx) * (Lx / nx)
    y = np.arange(ny) * (Ly / ny)
    return np.meshgrid(x, y, indexing="ij")


# ---------------------------------------------------------------------------
# Round spheres
# ---------------------------------------------------------------------------

def unit_sphere_volume(n):
    """Volume of the unit n-sphere ``S^n``."""
    return 2.0 * math.pi ** ((n + 1) / 2.0) / gamma((n + 1) / 2.0)


@dataclass(frozen=True)
class RoundSphere:
    """Round sphere of dimension ``n`` and squared radius ``r2``."""

    n: int = 2
    r2: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise InvalidMetric(f"sphere dimension must be an integer >= 2, got {self.n}")
        if not (np.isfinite(self.r2) and self.r2 > 0):
            raise InvalidMetric(f"sphere r2 must be positive, got {self.r2}")

    shape = ()

    def scaled(self, c):
        return RoundSphere(self.n, c * self.r2)

    def _check_field(self, field):
        field = np.asarray(field, dtype=float)
        if field.ndim != 0:
            raise ValueError("fields on a round sphere are constants")
        return field

    def scalar_curvature(self):
        return np.float64(self.n * (self.n - 1) / self.r2)

    def ricci(self):
        return IsotropicTensor((self.n - 1) / self.r2)

    def metric_tensor(self):
        return IsotropicTensor(1.0)

    def laplace_beltrami(self, field):
        return 0.0 * self._check_field(field)

    def gradient_norm_sq(self, field):
        return 0.0 * self._check_field(field)

    def gradient_inner(self, f, phi):
        return 0.0 * self._check_field(f) * self._check_field(phi)

    def hessian(self, field):
        self._check_field(field)
        return IsotropicTensor(0.0)

    def tensor_norm_sq(self, tensor):
        return np.float64(tensor.coef**2 * self.n)

    def trace(self, tensor):
        return np.float64(tensor.coef * self.n)

    def measure_weight(self):
        # the whole sphere is a single homogeneous "node"
        return np.float64(self.volume())

    def volume(self):
        return float(unit_sphere_volume(self.n) * self.r2 ** (self.n / 2.0))

    def stiffness(self, field):
        return 0.0 * self._check_field(field)

    def cfl_bound(self):
        return math.inf

    def constant_field(self, value):
        return np.float64(value)

    def summary(self):
        return {"family": "sphere", "n": self.n, "r2": self.r2}


# ---------------------------------------------------------------------------
# Family-agnostic operations
# ---------------------------------------------------------------------------

def scalar_curvature(metric):
    return metric.scalar_curvature()


def ricci(metric):
    return metric.ricci()


def laplace_beltrami(metric, field):
    return metric.laplace_beltrami(field)


def gradient_norm_sq(metric, field):
    return metric.gradient_norm_sq(field)


def hessian(metric, field):
    return metric.hessian(field)


def measure_weight(metric):
    return metric.measure_weight()


def volume(metric):
    return metric.volume()


def metric_tensor(metric):
    return metric.metric_tensor()


def tensor_norm_sq(metric, tensor):
    return metric.tensor_norm_sq(tensor)


def integrate(metric, field, weight=None):
    """``int field dmu`` (optionally ``int field * weight dmu``) as a node sum."""
    density = np.asarray(field, dtype=float) * metric.measure_weight()
    if weight is not None:
        density = density * weight
    return float(np.sum(density))


def dimension(metric):
    return metric.n


def smooth_random_field(metric, rng, n_modes=4, amplitude=0.3):
    """A random smooth periodic field of low Fourier modes (a constant on spheres)."""
    if isinstance(metric, RoundSphere):
        return np.float64(amplitude * rng.standard_normal())
    x, y = grid_coordinates(metric.nx, metric.ny, metric.Lx, metric.Ly)
    field = np.zeros(metric.shape)
    for _ in range(n_modes):
        mx, my = rng.integers(-2, 3, size=2)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        c = rng.standard_normal() / n_modes
        field += c * np.cos(2.0 * np.pi * (mx * x / metric.Lx + my * y / metric.Ly) + phase)
    return amplitude * field
