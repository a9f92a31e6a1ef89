"""Exception hierarchy shared by all modules."""


class PwaSensError(Exception):
    """Base class for library errors."""


class InputError(PwaSensError, ValueError):
    """Malformed arguments (dimension mismatch, negative radius, ...)."""


class DomainViolationError(PwaSensError, ValueError):
    """A point lies outside the domain of the function being evaluated."""


class UnboundedRegionError(PwaSensError):
    """A polytope expected to be bounded is not."""


class EmptyRegionError(PwaSensError):
    """A polytope expected to be non-empty is empty."""


class DegenerateBoundError(PwaSensError):
    """The slope constant of the lower-bound modulus is zero or undefined."""


class InsufficientDataError(PwaSensError):
    """Too few samples to identify the requested number of affine pieces."""


class EvaluationError(PwaSensError):
    """An objective returned a non-finite value."""

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point


class FormatError(PwaSensError):
    """A serialized document does not follow its schema."""
