"""Exception types shared across the package."""


class VhjError(Exception):
    """Base class for all package errors."""


class ConfigurationError(VhjError):
    """Invalid problem/grid/scheme configuration or config file."""


class EnvelopeError(VhjError):
    """Growth envelope is not usable (e.g. not increasing on samples)."""


class BlowUpError(VhjError):
    """Time stepping produced a non-finite value."""

    def __init__(self, message, node=None, time=None):
        super().__init__(message)
        self.node = node
        self.time = time


class NonConvergenceError(VhjError):
    """Iteration did not reach its tolerance."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history


class OracleFailureError(VhjError):
    """The radial shooting oracle could not bracket or integrate."""
