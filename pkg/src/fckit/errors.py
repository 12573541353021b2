"""Exception hierarchy shared by all fckit modules.

The CLI maps these onto its exit-code contract: ValidationError -> 1,
DataFormatError (and plain OSError) -> 2, InternalError -> 3.
"""


class FckitError(Exception):
    """Base class for all errors raised by fckit."""


class ValidationError(FckitError, ValueError):
    """Caller supplied invalid data: bad shapes, bad config, bad arguments."""


class ShapeError(ValidationError):
    """Tensor shapes incompatible with the requested operation."""


class DataFormatError(FckitError):
    """A file on disk is corrupt, truncated, or not the expected format."""


class InternalError(FckitError):
    """An internal invariant broke (non-finite values, impossible state)."""
