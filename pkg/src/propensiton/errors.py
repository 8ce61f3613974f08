"""Exception types shared across the simulator."""


class PQTError(Exception):
    """Base class for simulator errors."""


class GridMismatchError(PQTError, ValueError):
    pass


class NullStateError(PQTError, ValueError):
    pass


class ResolutionError(PQTError, ValueError):
    """A packet or potential is under-resolved or does not fit in the box."""


class BoundaryMassError(PQTError, RuntimeError):
    """Density reached the outer margin of the periodic box."""

    def __init__(self, message: str, t: float | None = None, mass: float | None = None):
        super().__init__(message)
        self.t = t
        self.mass = mass


class NormalizationError(PQTError, ValueError):
    pass


class BoundStateError(PQTError, RuntimeError):
    pass


class ConvergenceError(PQTError, RuntimeError):
    pass


class ConfigError(PQTError, ValueError):
    """Invalid experiment or run configuration.

    ``field`` names the offending entry (dotted path) when known; ``line``
    and ``column`` locate parse errors in the source text.
    """

    def __init__(self, message: str, field: str | None = None, line: int | None = None,
                 column: int | None = None):
        super().__init__(message)
        self.field = field
        self.line = line
        self.column = column


class ReadoutError(PQTError, ValueError):
    pass


class TrajectoryError(PQTError, RuntimeError):
    """A single ensemble member failed; carries its index."""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"trajectory {index} failed: {type(cause).__name__}: {cause}")
        self.index = index
        self.cause = cause


class PlotError(PQTError, ValueError):
    """Plot input is missing, empty or lacks a required column."""
