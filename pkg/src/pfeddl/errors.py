"""Exception types raised across the package."""

from __future__ import annotations


class PFedDLError(Exception):
    """Base class for all package errors."""


class ShapeError(PFedDLError, ValueError):
    """Array dimensions are inconsistent with each other."""


class ConfigurationError(PFedDLError, ValueError):
    """A configuration or hyperparameter value is invalid."""


class InvalidStateError(PFedDLError, RuntimeError):
    """An algorithm reached a state it cannot proceed from."""


class DegenerateInputError(PFedDLError, ValueError):
    """Input data is numerically degenerate (e.g. a constant time series)."""


class MatrixFormatError(PFedDLError, ValueError):
    """A matrix or label text file is malformed.

    ``line`` and ``column`` are 1-based and ``None`` when not applicable.
    """

    def __init__(self, message: str, path=None, line: int | None = None, column: int | None = None):
        self.path = path
        self.line = line
        self.column = column
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
