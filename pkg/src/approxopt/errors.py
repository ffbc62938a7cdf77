"""Exception types shared across the toolkit."""


class ParameterError(ValueError):
    """An argument is outside the operation's documented domain."""


class NumericError(ArithmeticError):
    """A computation produced or received a non-finite or ill-posed value."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"iteration {iteration}: {message}"
        super().__init__(message)
        self.iteration = iteration


class RankDeficientError(NumericError):
    """A factor Gram matrix is too ill-conditioned to invert."""


class ParseError(ValueError):
    """Malformed input file."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ValueError):
    """Experiment configuration failed validation."""
