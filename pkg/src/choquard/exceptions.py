"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class ChoquardError(Exception):
    """Base class for every error raised by the package."""


class InvalidScaleError(ChoquardError, ValueError):
    """A concentration parameter is outside its admissible range."""


class DomainError(ChoquardError, ValueError):
    """An argument lies outside the domain of a formula."""


class QuadratureError(ChoquardError, ArithmeticError):
    """A quadrature produced non-finite samples or failed to converge."""

    def __init__(self, message: str, node=None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class ContractError(ChoquardError, ValueError):
    """Inputs violate a documented precondition (tags, exponents, shapes)."""


class ExtrapolationError(ChoquardError, ValueError):
    """A field was evaluated outside the region its grid covers."""


class RefinementError(ChoquardError, ValueError):
    """A grid is too coarse to resolve the concentration scale."""


class DegenerateError(ChoquardError, ArithmeticError):
    """A quotient or linear system is numerically degenerate."""


class NormError(ChoquardError, ArithmeticError):
    """A weighted norm met a non-finite sample."""

    def __init__(self, message: str, location=None):
        super().__init__(message if location is None else f"{message} at {location}")
        self.location = location


class PoorFitError(ChoquardError):
    """A regression fell below its goodness-of-fit threshold."""

    def __init__(self, message: str, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class SingularSystemError(DegenerateError):
    """A discretised linear system is singular; carries smallest singular pairs."""

    def __init__(self, message: str, singular_values=None, vectors=None):
        super().__init__(message)
        self.singular_values = singular_values
        self.vectors = vectors
