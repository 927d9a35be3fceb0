"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """An argument is outside the physical or numerical domain of an operation."""


class ConfigError(ValueError):
    """A parameter file or flag set is malformed (missing key, unknown key, bad value)."""


class ParseError(ValueError):
    """A file could not be decoded.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = "%s (byte %d)" % (message, offset)
        super().__init__(message)
        self.offset = offset


class CalibrationError(RuntimeError):
    """The calibration pipeline could not produce a usable result."""


class InsufficientDataError(CalibrationError):
    """Fewer observations than the stage needs (circles, slices, estimates)."""


class DegenerateProfileError(CalibrationError):
    """An edge profile has no usable falling edges."""


class EmptyEvaluationError(ValueError):
    """No valid pixels survived masking; metrics are undefined."""
