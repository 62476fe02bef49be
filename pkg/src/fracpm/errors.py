class FracPMError(Exception):
    """Base class for numerical failures raised by the solver."""


class ConvergenceError(FracPMError):
    """An iterative method stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message if residual is None
                         else f"{message} (final residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration.

    ``line`` is the 1-based line of the offending text when known, ``key``
    the configuration field at fault.
    """

    def __init__(self, message, line=None, key=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line
        self.key = key
