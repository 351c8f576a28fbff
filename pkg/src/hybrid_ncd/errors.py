"""Exception hierarchy shared by the pipeline stages."""


class NcdError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(NcdError, ValueError):
    """An argument or configuration value is out of its valid range."""


class DimensionError(NcdError, ValueError):
    """Array shapes do not agree with the model or basis they are used with."""


class NumericalRankError(NcdError, ArithmeticError):
    """A Gram matrix is too degenerate to invert under the requested policy."""


class DivergenceError(NcdError, ArithmeticError):
    """A prediction produced non-finite values."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class PipelineError(NcdError, RuntimeError):
    """A pipeline stage could not produce a usable result."""

    def __init__(self, message, stage=None):
        super().__init__(message if stage is None else f"[{stage}] {message}")
        self.stage = stage


class CrashError(NcdError, RuntimeError):
    """The simulated hopper hit the ground (mass height <= 0)."""

    def __init__(self, message, time=None, step=None):
        super().__init__(message)
        self.time = time
        self.step = step


class LoadError(NcdError, ValueError):
    """An input file is unreadable or fails schema validation."""
