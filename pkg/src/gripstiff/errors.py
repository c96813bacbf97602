"""Exception hierarchy shared by every gripstiff module."""


class GripstiffError(Exception):
    """Base class for all library errors."""


class ConfigError(GripstiffError, ValueError):
    """Invalid configuration or argument values."""


class DomainError(GripstiffError, ValueError):
    """Argument outside the domain of a function."""


class ShapeError(GripstiffError, ValueError):
    """Tensor or signal dimensions do not match."""


class StateError(GripstiffError, RuntimeError):
    """Operation called in the wrong state (missing cache, already standardized, ...)."""


class DegenerateInputError(GripstiffError, ZeroDivisionError):
    """Inputs make a ratio undefined."""


class IntegratorBlowup(GripstiffError, FloatingPointError):
    """The dynamics integrator produced a non-finite state."""

    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"non-finite state at integrator step {step}")


class ParseError(GripstiffError, ValueError):
    """Malformed file contents.

    ``offset`` is a byte offset for binary containers; ``row``/``column``
    locate the problem in text inputs.
    """

    def __init__(self, message: str, *, offset=None, row=None, column=None, path=None):
        self.offset = offset
        self.row = row
        self.column = column
        self.path = path
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append(f"byte {offset}")
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class VersionError(ParseError):
    """Binary container written by an unsupported format version."""


class MetricError(GripstiffError, ValueError):
    """Metric undefined for the given labels (e.g. MAPE with a zero label)."""
