"""Exception types shared across the pipeline."""


class NetfolioError(Exception):
    """Base class for all package errors."""


class DataError(NetfolioError, ValueError):
    """Input data is unreadable or violates a panel invariant."""


class ConfigError(NetfolioError, ValueError):
    """Invalid run configuration."""


class ConvergenceError(NetfolioError, RuntimeError):
    """An iterative clusterer did not converge.

    ``exemplars`` carries the last exemplar set seen, so callers can
    inspect the state or retry with stronger damping.
    """

    def __init__(self, message, exemplars=None, iterations=None):
        super().__init__(message)
        self.exemplars = [] if exemplars is None else list(exemplars)
        self.iterations = iterations
