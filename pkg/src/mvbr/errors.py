"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ValidationError(ValueError):
    """Input data or configuration violates a documented contract."""


class FormatError(Exception):
    """A binary container is malformed; carries the failing byte offset."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class InsufficientFramesError(ValueError):
    """A clip is shorter than the required snippet length."""

    def __init__(self, have, need):
        super().__init__(f"clip has {have} frames, need at least {need}")
        self.have = have
        self.need = need


class NumericError(RuntimeError):
    """A numeric failure: non-finite loss, failed gradient check, and similar."""
