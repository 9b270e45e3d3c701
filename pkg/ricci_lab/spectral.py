"""Lowest eigenpair of ``-4 Delta_g + k R`` and the quantities derived from it.

The discrete problem is the symmetric generalized eigenproblem ``A psi = lam M psi``
with

* ``A = 4 K + k diag(R w)``, ``K = -Delta_0 * hx * hy`` the flat stiffness operator
  (the Dirichlet energy is conformally invariant in 2D), and
* ``M = diag(w)``, ``w = e^{2u} hx hy`` the node measure weights.

``A`` is applied matrix-free through the FFT. The lowest eigenvalue is found by
shift-invert Lanczos (:func:`scipy.sparse.linalg.eigsh`) below the lower bound
``k min R``, with shifted solves done by conjugate gradients preconditioned by
the flat constant-coefficient operator. Round spheres use the closed form.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass

import numpy as np
from scipy import fft, linalg
from scipy.sparse.linalg import LinearOperator, cg, eigsh

from .errors import NonPositiveEigenfunction, SolverNoConvergence, ZeroField
from .geometry import RoundSphere

try:
    from tqdm import tqdm
    TQDM_AVAILABLE = True
except ImportError:
    TQDM_AVAILABLE = False

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 2000
DENSE_MAX_NODES = 64 * 64

_CG_RTOL = 1e-13
_CG_MAX_ITER = 500
_POLISH_STEPS = 8


@dataclass(frozen=True, eq=False)
class SpectralResult:
    """Ground state of ``-4 Delta + k R``.

    Attributes
    ----------
    lam : float
        Lowest eigenvalue.
    u_eig : numpy.ndarray
        Positive eigenfunction normalized to ``int u^2 dmu = 1``.
    k : float
    residual : float
        ``|A psi - lam M psi| / (max(1, |lam|) |M psi|)``.
    metric : ConformalTorus or RoundSphere
        The metric the pair belongs to.
    """

    lam: float
    u_eig: np.ndarray
    k: float
    residual: float
    metric: object = None


def _check_k(k):
    if not (np.isfinite(k) and k >= 1):
        raise ValueError(f"k must be a real >= 1, got {k}")


# ---------------------------------------------------------------------------
# Discrete operator
# ---------------------------------------------------------------------------

class _TorusProblem:
    """Matrix-free ``A`` and ``M`` for one torus metric and one ``k``."""

    def __init__(self, metric, k):
        self.metric = metric
        self.k = float(k)
        self.shape = metric.shape
        self.size = metric.nx * metric.ny
        self.weight = np.asarray(metric.measure_weight())
        self.potential = self.k * metric.scalar_curvature() * self.weight
        self.cell = metric.hx * metric.hy
        self._lap = metric._multipliers["lap"]

    def apply_a(self, psi):
        psi = psi.reshape(self.shape)
        return 4.0 * self.metric.stiffness(psi) + self.potential * psi

    def apply_m(self, psi):
        return self.weight * psi.reshape(self.shape)

    def lower_bound(self):
        return float(self.k * self.metric.scalar_curvature().min())

    def shifted_solver(self, sigma):
        """``x -> (A - sigma M)^{-1} x`` by preconditioned CG."""
        diag = self.potential - sigma * self.weight
        if diag.min() <= 0:
            raise ValueError(f"shift {sigma:.6g} does not lie below the spectrum")
        symbol = 4.0 * self.cell * np.abs(self._lap) + float(diag.mean())

        def shifted(x):
            x = x.reshape(self.shape)
            return (4.0 * self.metric.stiffness(x) + diag * x).ravel()

        def precondition(x):
            return fft.ifft2(fft.fft2(x.reshape(self.shape)) / symbol).real.ravel()

        n = self.size
        op = LinearOperator((n, n), matvec=shifted, dtype=float)
        pre = LinearOperator((n, n), matvec=precondition, dtype=float)

        def solve(b):
            b = np.asarray(b, dtype=float).ravel()
            x, info = cg(op, b, rtol=_CG_RTOL, atol=0.0, maxiter=_CG_MAX_ITER, M=pre)
            if info > 0:
                logger.debug("cg stopped after %d iterations without reaching rtol", info)
            return x

        return solve

    def residual(self, psi, lam):
        m_psi = self.apply_m(psi)
        r = self.apply_a(psi) - lam * m_psi
        return float(np.linalg.norm(r) / (max(1.0, abs(lam)) * np.linalg.norm(m_psi)))

    def rayleigh(self, psi):
        psi = psi.reshape(self.shape)
        return float(np.sum(psi * self.apply_a(psi)) / np.sum(psi * self.apply_m(psi)))


def _normalize(psi, weight):
    if np.sum(psi * weight) < 0:
        psi = -psi
    return psi / np.sqrt(np.sum(psi**2 * weight))


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def lowest_eigenpair(metric, k, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER):
    """Lowest eigenvalue and positive normalized eigenfunction of ``-4 Delta + k R``.

    Parameters
    ----------
    metric : ConformalTorus or RoundSphere
    k : float
        Real parameter ``>= 1``.
    tol : float
        Relative residual the returned pair must meet.
    max_iter : int
        Lanczos iteration budget.

    Returns
    -------
    SpectralResult

    Raises
    ------
    SolverNoConvergence
        When the residual is above ``tol`` after the solve and polishing.
    """
    _check_k(k)
    if isinstance(metric, RoundSphere):
        lam = float(k * metric.scalar_curvature())
        u_eig = np.float64(metric.volume() ** -0.5)
        return SpectralResult(lam, u_eig, float(k), 0.0, metric)

    problem = _TorusProblem(metric, k)
    spread = float(np.ptp(problem.potential / problem.weight))
    sigma = problem.lower_bound() - 0.05 * (1.0 + spread)
    solve = problem.shifted_solver(sigma)
    n = problem.size

    a_op = LinearOperator((n, n), matvec=lambda x: problem.apply_a(x).ravel(), dtype=float)
    m_op = LinearOperator((n, n), matvec=lambda x: problem.apply_m(x).ravel(), dtype=float)
    opinv = LinearOperator((n, n), matvec=solve, dtype=float)

    try:
        _, vecs = eigsh(a_op, k=1, M=m_op, sigma=sigma, which="LM", OPinv=opinv,
                        v0=np.ones(n), tol=tol * 1e-3, maxiter=max_iter)
    except Exception as exc:  # ArpackNoConvergence and friends
        raise SolverNoConvergence(f"eigsh failed for k={k}: {exc}") from exc

    psi = _normalize(vecs[:, 0].real.reshape(problem.shape), problem.weight)
    lam = problem.rayleigh(psi)
    residual = problem.residual(psi, lam)

    # shifted inverse iteration cleans up the inner-solve error
    steps = 0
    while residual > 0.1 * tol and steps < _POLISH_STEPS:
        psi = _normalize(solve(problem.apply_m(psi)).reshape(problem.shape), problem.weight)
        lam = problem.rayleigh(psi)
        residual = problem.residual(psi, lam)
        steps += 1

    logger.debug("eigensolve k=%g grid=%s lam=%.12g residual=%.3g polish=%d",
                 k, problem.shape, lam, residual, steps)
    if residual > tol:
        raise SolverNoConvergence(
            f"lowest eigenpair residual {residual:.3g} above tolerance {tol:g}",
            residual=residual,
        )
    return SpectralResult(lam, psi, float(k), residual, metric)


def dense_lowest_eigenpair(metric, k):
    """Same discrete problem solved densely; an oracle for grids up to 64x64.

    The operator is assembled by applying it to identity columns. ``M`` is
    diagonal, so the pencil is reduced to ``M^{-1/2} A M^{-1/2}`` and only
    the lowest eigenpair is requested from :func:`scipy.linalg.eigh`.
    """
    _check_k(k)
    if isinstance(metric, RoundSphere):
        return lowest_eigenpair(metric, k)
    problem = _TorusProblem(metric, k)
    n = problem.size
    if n > DENSE_MAX_NODES:
        raise ValueError(f"dense oracle limited to {DENSE_MAX_NODES} nodes, got {n}")

    a = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        a[:, j] = problem.apply_a(e).ravel()
        e[j] = 0.0
    a = 0.5 * (a + a.T)
    scale = 1.0 / np.sqrt(problem.weight.ravel())
    a *= scale[:, None]
    a *= scale[None, :]
    vals, vecs = linalg.eigh(a, subset_by_index=[0, 0], overwrite_a=True, check_finite=False)
    psi = _normalize((scale * vecs[:, 0]).reshape(problem.shape), problem.weight)
    lam = float(vals[0])
    logger.debug("dense oracle on %d nodes: lam=%.12g", n, lam)
    return SpectralResult(lam, psi, float(k), problem.residual(psi, lam), metric)


def rayleigh_quotient(metric, k, field):
    """``int (4|grad u|^2 + k R u^2) dmu / int u^2 dmu`` in the discrete form."""
    field = metric._check_field(field)
    weight = metric.measure_weight()
    mass = float(np.sum(field**2 * weight))
    if mass == 0.0:
        raise ZeroField("trial field has zero weighted L2 norm")
    energy = 4.0 * np.sum(field * metric.stiffness(field))
    energy += k * np.sum(metric.scalar_curvature() * field**2 * weight)
    return float(energy / mass)


def lambda_bar(metric, k, result=None):
    """Scale-invariant ``lam * V^{2/n}``."""
    if result is None:
        result = lowest_eigenpair(metric, k)
    return result.lam * metric.volume() ** (2.0 / metric.n)


def f_from_eigenfunction(result):
    """Weight ``f = -2 ln u_eig``, so that ``e^{-f/2}`` is the eigenfunction."""
    u_eig = np.asarray(result.u_eig, dtype=float)
    if np.any(u_eig <= 0):
        raise NonPositiveEigenfunction(
            f"eigenfunction has {int(np.sum(u_eig <= 0))} node(s) <= 0 "
            f"(min {float(u_eig.min()):.3g})"
        )
    return -2.0 * np.log(u_eig)


def eigenpairs(metrics, k, tol=DEFAULT_TOL, workers=1, progress=False):
    """:func:`lowest_eigenpair` for each metric, in input order.

    With ``workers > 1`` the solves run on a thread pool and are reassembled
    by submission index.
    """
    metrics = list(metrics)
    if workers <= 1 or len(metrics) < 2:
        return [lowest_eigenpair(m, k, tol=tol) for m in metrics]

    results = [None] * len(metrics)
    with ThreadPoolExecutor(max_workers=workers) as executor:
        futures = {executor.submit(lowest_eigenpair, m, k, tol): i
                   for i, m in enumerate(metrics)}
        if progress and TQDM_AVAILABLE:
            futures_iter = tqdm(as_completed(futures), total=len(futures),
                                desc=f"eigensolves k={k:g}", unit="state")
        else:
            futures_iter = as_completed(futures)
        for future in futures_iter:
            results[futures[future]] = future.result()
    return results
