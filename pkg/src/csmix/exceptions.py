"""Exception types raised by csmix."""


class CSMError(Exception):
    """Base class for all csmix errors."""


class DomainError(CSMError, ValueError):
    """An argument lies outside the domain of the requested operation."""


class PreconditionError(CSMError, ValueError):
    """A caller-side precondition was violated (e.g. a start point outside its box)."""


class DegenerateCovarianceError(CSMError, ValueError):
    """A covariance or precision matrix is singular or not positive definite."""


class NumericalError(CSMError, RuntimeError):
    """A numerical routine failed to resolve; ``diagnostics`` carries the details."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class QuadratureError(NumericalError):
    """Adaptive quadrature did not reach the requested accuracy."""


class SamplerError(CSMError, RuntimeError):
    """A Gibbs sweep failed; ``iteration`` records where."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class UnsupportedOperationError(CSMError, TypeError):
    """The operation is not defined for this kind of chain or model."""
