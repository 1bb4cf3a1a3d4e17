"""Shared exception types."""


class TtadaptError(Exception):
    """Base class for all engine errors."""


class ShapeError(TtadaptError):
    """Raised when operand shapes do not conform for an operation."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {self.shapes}")


class NumericalError(TtadaptError):
    """Raised when a computation leaves the finite-float domain."""


class FormatError(TtadaptError):
    """Raised on malformed binary files; carries the failing byte offset."""

    def __init__(self, path, offset: int, reason: str):
        self.path = str(path)
        self.offset = offset
        self.reason = reason
        super().__init__(f"{self.path} @ byte {offset}: {reason}")


class ConfigError(TtadaptError):
    """Raised for invalid experiment configuration before a run starts."""


class CompatibilityError(ConfigError):
    """Raised when an adapter cannot run on the configured encoder."""
