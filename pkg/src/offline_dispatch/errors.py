"""Exception types shared across the package."""


class DispatchError(Exception):
    """Base class for all package errors."""


class DimensionError(DispatchError):
    """Invalid problem dimensions."""


class ParseError(DispatchError):
    """Malformed instance / solution / dataset text."""


class InvalidActionError(DispatchError):
    """An action outside the legal set was dispatched."""


class StateError(DispatchError):
    """Operation called on a state that does not support it."""


class ShapeError(DispatchError):
    """Tensor shape mismatch."""


class MaskError(DispatchError):
    """Invalid action mask (e.g. no legal action in a row)."""


class DataError(DispatchError):
    """Inconsistent or corrupted data passed to a training component."""


class CompatibilityError(DispatchError):
    """Checkpoint or parameter manifest mismatch."""
