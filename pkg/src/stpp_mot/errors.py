"""Exception classes raised throughout the package."""

from typing import Optional, Tuple


class StppError(Exception):
    """Root of all errors raised by this package."""


class RejectedInputError(StppError, ValueError):
    """An argument violates a shape or value precondition."""


class RejectedConfigError(StppError, ValueError):
    """A configuration value is missing, unknown or out of range."""


class DataError(StppError, ValueError):
    """A file is missing or cannot be parsed.

    Attributes:
        path: Path of the offending file, if known.
        line: 1-based line number of the offending record, if known.
        column: 1-based column (field) number, if known.
    """

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
        column: Optional[int] = None,
    ):
        location = []
        if path is not None:
            location.append(f"{path}")
        if line is not None:
            location.append(f"line {line}")
        if column is not None:
            location.append(f"column {column}")
        if location:
            message = f"{', '.join(location)}: {message}"
        super().__init__(message)
        self.path = path
        self.line = line
        self.column = column


class NumericError(StppError, ArithmeticError):
    """A computation produced a non-finite or out-of-domain value.

    Attributes:
        op: Name of the operation that failed.
        frame: Frame index of the failure, if known.
        cell: (row, col) of the failure, if known.
    """

    def __init__(
        self,
        op: str,
        message: str = "non-finite result",
        frame: Optional[int] = None,
        cell: Optional[Tuple[int, int]] = None,
    ):
        where = ""
        if frame is not None:
            where += f" at frame {frame}"
        if cell is not None:
            where += f" cell (row={cell[0]}, col={cell[1]})"
        super().__init__(f"{op}: {message}{where}")
        self.op = op
        self.frame = frame
        self.cell = cell
