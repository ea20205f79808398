"""Exception types raised across the package."""


class InputError(ValueError):
    """Invalid argument: bad shape, non-finite entries, out-of-range value."""


class ShapeMismatchError(InputError):
    """Operands have incompatible mode sizes or kinds."""


class SolverError(RuntimeError):
    """A numerical solve broke down.

    ``history`` carries whatever diagnostics were collected before the
    failure (residuals, condition estimates, ...).
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history) if history is not None else []


class SingularMatrixError(SolverError):
    """Dense system is singular to working precision."""

    def __init__(self, message, rcond=None):
        super().__init__(message)
        self.rcond = rcond


class CapacityError(InputError):
    """Problem too large for a dense or full-grid code path."""
