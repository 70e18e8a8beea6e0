"""Exception taxonomy shared by every module."""


class UrbanVitError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(UrbanVitError):
    """An input violates a documented precondition or invariant."""


class GeometryError(UrbanVitError):
    """Degenerate or otherwise unusable geometry."""


class FormatError(UrbanVitError):
    """A file does not conform to its documented format."""


class MissingDataError(UrbanVitError):
    """A required layer has no usable data for the requested computation."""


class SingularSystemError(UrbanVitError):
    """A linear system is rank deficient or otherwise ill posed."""
