"""Exception hierarchy shared by all modules."""


class CapacityError(Exception):
    """Base class for errors raised by fpcap."""


class SizeError(CapacityError, ValueError):
    """A problem instance exceeds a configured size cap."""


class DomainError(CapacityError, ValueError):
    """An argument lies outside the domain of the operation."""


class DimensionError(CapacityError, ValueError):
    """Array shapes or (c, q) parameters do not match."""


class UnsupportedError(CapacityError):
    """The requested operation is not supported for these parameters."""


class SingularityError(CapacityError, ArithmeticError):
    """A division by a vanishing attack probability that no limit convention covers."""


class NonConvergenceError(CapacityError, RuntimeError):
    """An iterative solver hit its iteration cap before reaching tolerance.

    ``partial`` carries the best iterate found so far (its type depends on
    the solver that raised).
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class SupportCapError(NonConvergenceError):
    """The double-oracle bias support grew past its cap."""


class NumericalError(CapacityError, ArithmeticError):
    """A numerical subproblem (e.g. the conic restricted game) failed."""
