"""Exception hierarchy shared across the toolkit."""


class MousetapError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(MousetapError, ValueError):
    """Invalid argument or configuration value."""


class FormatError(MousetapError):
    """Malformed file or byte stream."""


class UnsupportedFormatError(FormatError):
    """Recognized container but unsupported encoding."""


class CodecError(MousetapError):
    """Wire/CSV packet codec failure (bad magic, truncation, overflow)."""


class TransportError(MousetapError):
    """Network transport failure surfaced to the caller."""


class InsufficientSignalError(MousetapError):
    """Input too short for the requested analysis."""
