"""Exception types shared across the package."""


class TorusPDOError(Exception):
    """Base class for library errors."""


class OutOfRangeError(TorusPDOError, IndexError):
    """A lattice point or difference stencil left the declared box."""


class PreconditionError(TorusPDOError, ValueError):
    """Input data violates a documented precondition."""


class ResolutionError(PreconditionError):
    """Samples are not resolved by the requested box or grid."""


class KernelTailError(PreconditionError):
    """The interpolation kernel tail exceeds the tolerance at the chosen window."""


class EllipticityError(PreconditionError):
    """The principal symbol fails the lower bound needed for inversion."""

    def __init__(self, message, x_index=None, xi=None):
        super().__init__(message)
        self.x_index = x_index
        self.xi = xi


class PhaseError(PreconditionError):
    """A phase function fails the periodicity certificate or the graph condition."""


class IterationLimitError(TorusPDOError, RuntimeError):
    """An iterative method stopped before meeting its tolerance."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


class AccuracyError(TorusPDOError, RuntimeError):
    """Adaptive refinement could not reach the requested accuracy."""


class ExpressionError(TorusPDOError, ValueError):
    """Malformed expression; ``position`` is the zero-based offending column."""

    def __init__(self, message, position):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UndefinedFitError(PreconditionError):
    """A decay fit was requested on shells that hold no lattice points."""
