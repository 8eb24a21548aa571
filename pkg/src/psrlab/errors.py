"""Exception types shared across the package."""


class PsrLabError(Exception):
    """Base class for all package-specific errors."""


class StructuralError(PsrLabError):
    """Malformed object: dimension mismatch, index out of range, bad shape."""


class EnumerationCapExceeded(PsrLabError):
    """An exact enumeration would exceed the configured trajectory cap."""


class DegenerateHistory(PsrLabError):
    """A history has (numerically) zero probability under the queried model."""


class SingularCoreTests(PsrLabError):
    """Core-test system is rank deficient or too ill-conditioned to invert."""


class EmptyFeasibleSet(PsrLabError):
    """The stability constraint removed every candidate model."""


class RejectionBudgetExhausted(PsrLabError):
    """A rejection-sampling constructor ran out of attempts."""
