"""
Exception hierarchy for the uncertainty attention lab.

Validation problems (bad configuration, malformed files, violated
preconditions) and numerical faults are kept apart so the command line can
map them onto distinct exit codes.
"""

from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the lab."""


class ValidationError(LabError, ValueError):
    """Raised when an input, a configuration or a precondition is invalid."""


class ShapeError(ValidationError):
    """Raised when tensor or grid extents do not agree."""


class DatasetFormatError(ValidationError):
    """
    Raised when a dataset file cannot be parsed or violates an invariant.

    Attributes:
        line: 1-based line number of the offending record (None for whole-file problems)
        field: Name of the offending field, if known
    """

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"line {line}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"{', '.join(location)}: " if location else ""
        super().__init__(f"{prefix}{message}")
        self.line = line
        self.field = field


class NumericalFaultError(LabError, ArithmeticError):
    """Raised when an operation produces NaN or infinite values."""
