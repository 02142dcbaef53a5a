"""
Error types raised by the library.
Every error subclasses both MaziError and ValueError.
"""


class MaziError(Exception):
    """Base class for all library errors"""


class GraphFormatError(MaziError, ValueError):
    """Malformed or unusable graph / label / id-map input"""

    def __init__(self, message, path=None, line_number=None):
        self.path = path
        self.line_number = line_number
        if path is not None and line_number is not None:
            message = f"{path}:{line_number}: {message}"
        elif path is not None:
            message = f"{path}: {message}"
        super().__init__(message)


class PartitionError(MaziError, ValueError):
    """Community assignment inconsistent with its graph"""


class ConfigError(MaziError, ValueError):
    """Invalid, unknown or missing configuration key"""

    def __init__(self, message, key=None):
        self.key = key
        super().__init__(message)


class InfeasibleSpecError(MaziError, ValueError):
    """A requested structure cannot be built (schedule, generator spec, split)"""

    def __init__(self, message, level=None):
        self.level = level
        super().__init__(message)


class DivergenceError(MaziError, ValueError):
    """Non-finite loss or gradient during optimisation"""


class DimensionMismatchError(MaziError, ValueError):
    """Embedding dimension does not match a model or another matrix"""
