"""Exception hierarchy shared across the engine.

Every failure the engine raises on purpose derives from EngineError so the
CLI can map it onto the documented exit codes: validation problems exit 1,
I/O problems (plain OSError) exit 2, numerical aborts exit 3.
"""


class EngineError(Exception):
    """Base class for all errors raised deliberately by this package."""


class ValidationError(EngineError):
    """Bad argument, bad configuration, or bad input data."""


class ShapeError(ValidationError):
    """Array arguments whose shapes do not satisfy an operation's contract."""


class StateError(ValidationError):
    """Object used before required state exists (for example a model graph
    asked to run forward before weights were initialised or applied)."""


class NumericsError(EngineError):
    """NaN or Inf encountered where only finite values are legal."""


class ContainerError(ValidationError):
    """A weight container file that cannot be accepted."""


class ContainerMagicError(ContainerError):
    """File does not start with the container magic number."""


class ContainerVersionError(ContainerError):
    """Container format version is not supported by this build."""


class ContainerChecksumError(ContainerError):
    """Stored checksum does not match the file contents."""


class ContainerTruncatedError(ContainerError):
    """File ends in the middle of a declared field or tensor payload."""
