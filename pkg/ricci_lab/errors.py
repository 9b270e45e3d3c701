"""Exception hierarchy for ricci_lab.

Every error names the quantity that failed and its value so a one-line
diagnostic is enough to locate the problem.
"""


class RicciLabError(Exception):
    """Base class for all errors raised by the package."""


class InvalidMetric(RicciLabError, ValueError):
    """A metric violates its invariants (grid size, periods, non-finite u)."""


class ZeroField(RicciLabError, ValueError):
    """A trial field has zero weighted L2 norm."""


class NonPositiveEigenfunction(RicciLabError, ValueError):
    """An eigenfunction expected to be positive has a node <= 0."""


class SolverNoConvergence(RicciLabError, RuntimeError):
    """The eigensolver missed its residual tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class StabilityViolation(RicciLabError, RuntimeError):
    """A time step exceeds the explicit CFL bound."""

    def __init__(self, dt, bound):
        super().__init__(f"dt={dt:.6g} exceeds CFL bound {bound:.6g}")
        self.dt = dt
        self.bound = bound


class BlowUp(RicciLabError, ArithmeticError):
    """The metric left its admissible range (r2 <= 0, |u| over the cap, NaN)."""


class TrajectoryTruncated(RicciLabError, RuntimeError):
    """Integration stopped early; ``trajectory`` holds the flagged partial run."""

    def __init__(self, reason, trajectory):
        super().__init__(f"trajectory truncated: {reason}")
        self.reason = reason
        self.trajectory = trajectory


class DomainExhausted(RicciLabError, RuntimeError):
    """The scale factor denominator reached zero; ``rescale_map`` is truncated."""

    def __init__(self, t, rescale_map=None):
        super().__init__(f"scale factor undefined from t={t:.6g} on")
        self.t = t
        self.rescale_map = rescale_map


class FormMismatch(RicciLabError, ArithmeticError):
    """Two algebraically equal forms of a functional disagree."""

    def __init__(self, name, a, b, tol):
        super().__init__(f"{name}: {a:.17g} != {b:.17g} (relative tol {tol:g})")
        self.name = name
        self.values = (a, b)


class HypothesisUnmet(RicciLabError):
    """A theorem's sign condition fails; the dependent check is skipped."""

    def __init__(self, reason, measured):
        super().__init__(f"{reason} (measured {measured:.6g})")
        self.reason = reason
        self.measured = measured


class ConfigInvalid(RicciLabError, ValueError):
    """A config field is missing, malformed or out of range."""

    def __init__(self, field, reason):
        super().__init__(f"config field '{field}': {reason}")
        self.field = field
        self.reason = reason


class MalformedRunFile(RicciLabError, ValueError):
    """A run CSV does not follow the run column layout."""

    def __init__(self, path, reason):
        super().__init__(f"{path}: {reason}")
        self.path = path
        self.reason = reason
