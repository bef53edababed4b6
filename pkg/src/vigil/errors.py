"""Exception hierarchy shared by every vigil module."""


class VigilError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(VigilError, ValueError):
    """Invalid hyperparameters, layer settings or config text."""


class DimensionError(VigilError, ValueError):
    """Tensor shapes that do not agree along some axis."""

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class RangeError(VigilError, ValueError):
    """An index, label or rectangle falls outside its allowed range."""


class FormatError(VigilError, ValueError):
    """Malformed binary or text input. ``offset`` is a byte offset when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IntegrityError(FormatError):
    """Checksum mismatch in a weight file."""


class ParseError(FormatError):
    """Non-numeric or otherwise unparsable token in a text file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        VigilError.__init__(self, message)
        self.offset = None
        self.line = line


class InputOrderError(VigilError, ValueError):
    """Timestamps or frame indices that go backwards."""


class AlignmentError(VigilError, ValueError):
    """Two input streams disagree on their frame count."""


class NumericError(VigilError, ArithmeticError):
    """Training diverged (NaN or infinite loss)."""
