"""Exception hierarchy shared across the package.

The CLI maps these onto its exit codes, so each family has one base class.
"""


class GPCNError(Exception):
    """Base class for all package errors."""


class ConfigError(GPCNError, ValueError):
    """Invalid configuration or usage."""


class DataError(GPCNError, ValueError):
    """Malformed or inconsistent input data."""


class OutOfRangeError(DataError, IndexError):
    pass


class ShapeError(GPCNError, ValueError):
    pass


class DegenerateDegreeError(DataError):
    pass


class UndefinedMeasureError(DataError):
    pass


class DegenerateClassError(DataError):
    pass


class SymmetryError(DataError):
    pass


class SizeError(GPCNError, ValueError):
    pass


class InsufficientSpectrumError(GPCNError, ValueError):
    pass


class NumericError(GPCNError, FloatingPointError):
    """NaN or Inf produced by a forward computation."""


class ParseError(DataError):
    """Dataset file could not be parsed.

    ``line`` is 1-based for text files and ``None`` for binary files.
    """

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
