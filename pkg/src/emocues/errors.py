"""Exception types shared across the package.

The CLI maps :class:`ValidationError` (and its subclass :class:`ParseError`)
to exit code 1 and :class:`OSError` to exit code 2.
"""
from __future__ import annotations


class ValidationError(ValueError):
    """Input violates a data contract (unknown label, bad field, mismatched checkpoint)."""


class ParseError(ValidationError):
    """A file's contents could not be parsed; carries the location when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line
