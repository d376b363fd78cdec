"""Exception types raised by the library and mapped to CLI exit codes."""


class InputError(ValueError):
    """Malformed or inconsistent input data."""


class ConfigError(ValueError):
    """Invalid solver or analysis parameters."""


class DegenerateDirectionError(ValueError):
    """Gradient of the norm requested at (numerically) zero direction."""


class UnsupportedCombinationError(ValueError):
    """Metric kind not supported by the requested stencil."""


class SizeError(ValueError):
    """Problem too large for exhaustive enumeration."""


class NumericalDivergenceError(RuntimeError):
    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite iterate at iteration {iteration}")
