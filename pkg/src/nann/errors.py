"""Exception types shared across the package."""


class NannError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(NannError, ValueError):
    """A public operation received arguments violating its contract."""


class FileFormatError(NannError, ValueError):
    """A dataset / model / index file is malformed.

    Carries the offending location so callers can report it.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        loc = ""
        if path is not None:
            loc += f"{path}"
        if line is not None:
            loc += f":{line}"
        super().__init__(f"{loc}: {message}" if loc else message)
        self.path = path
        self.line = line


class NumericError(NannError, ArithmeticError):
    """A computation produced a non-finite intermediate value."""


class WeightOverflowError(NannError, OverflowError):
    """A weight exceeds the largest finite half-precision value.

    ``component`` names the offending block (e.g. ``"mlp.1.weight"``).
    """

    def __init__(self, component: str, max_abs: float):
        super().__init__(
            f"{component}: |weight| = {max_abs:g} exceeds half-precision range"
        )
        self.component = component


class DegenerateVarianceError(NannError, ArithmeticError):
    """Correlation is undefined because one value list is constant."""


class TrainingDivergedError(NannError):
    """Training produced a non-finite loss; ``state`` holds the last finite state."""

    def __init__(self, message: str, state=None):
        super().__init__(message)
        self.state = state


class QueueShutdownError(NannError):
    """A request was submitted to a queue that is no longer accepting work."""
