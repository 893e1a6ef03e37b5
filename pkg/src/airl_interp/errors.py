"""Exception hierarchy shared by every stage of the pipeline."""


class AirlInterpError(Exception):
    """Base class for all package errors."""


class DimensionError(AirlInterpError, ValueError):
    """Array shapes do not line up."""


class ContractError(AirlInterpError, RuntimeError):
    """A precondition of an operation was violated by the caller."""


class TrainingError(AirlInterpError, ArithmeticError):
    """Non-finite values appeared while training.

    ``layer`` carries the index of the offending layer when known.
    """

    def __init__(self, message, layer=None):
        super().__init__(message)
        self.layer = layer


class NumericError(AirlInterpError, ArithmeticError):
    """Non-finite input to a numeric routine."""


class DataError(AirlInterpError, ValueError):
    """Malformed or inconsistent data on disk or in memory."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(AirlInterpError, ValueError):
    """Invalid configuration. ``path`` is the dotted field path."""

    def __init__(self, message, path=None):
        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class PipelineError(AirlInterpError, RuntimeError):
    """A stage was started without the artifacts it depends on."""


class DegenerateInputWarning(UserWarning):
    """Input was valid but the statistic is undefined; a fallback value was returned."""
