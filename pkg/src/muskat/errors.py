"""Exception types shared across the package."""


class MuskatError(Exception):
    """Base class for all errors raised by this package."""


class RangeError(MuskatError, ValueError):
    """Interface leaves the admissible range of its geometry."""


class ResolutionError(MuskatError, ValueError):
    """A length scale is not resolved by the grid."""


class QuadratureError(MuskatError, FloatingPointError):
    """Non-finite value encountered while summing a principal-value integral."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class AbortError(MuskatError, RuntimeError):
    """Time integration cannot continue.

    ``reason`` is one of ``"range breach"``, ``"dt collapse"`` or ``"NaN"``.
    """

    def __init__(self, reason, message, t=None, details=None):
        super().__init__(f"{reason}: {message}")
        self.reason = reason
        self.t = t
        self.details = details or {}


class ConfigError(MuskatError, ValueError):
    """A configuration document is malformed; ``field`` names the offending key."""

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
