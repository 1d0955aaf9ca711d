"""Shared exception types."""


class PebbletcError(Exception):
    """Base class for all library errors."""


class ParseError(PebbletcError, ValueError):
    """Raised on malformed input text.

    `position` is a 0-based character offset into the parsed text, or None
    when the error is not tied to a single location.
    """

    def __init__(self, message: str, position=None):
        self.position = position
        if position is not None:
            message = f"{message} (at offset {position})"
        super().__init__(message)
