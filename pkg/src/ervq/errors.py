"""Exception types raised by the library."""

from __future__ import annotations


class ErvqError(Exception):
    """Base class for all library errors."""


class InputError(ErvqError, ValueError):
    """Rejected input: wrong shape, invalid index, out-of-range value."""


class NumericalError(ErvqError, ArithmeticError):
    """A loss or parameter became non-finite.

    ``state`` holds a snapshot of the model at the failing step, when known.
    """

    def __init__(self, message: str, state: dict | None = None):
        super().__init__(message)
        self.state = state


class FormatError(ErvqError, ValueError):
    """A file does not follow the expected binary or text layout."""


class ErvqIOError(ErvqError, OSError):
    """Reading or writing a file failed; the message names the path."""
