"""Exception types raised across the package."""


class EstconvError(Exception):
    """Base class for all package errors."""


class InputError(EstconvError, ValueError):
    """Malformed external input (mesh files, polygon files)."""


class PreconditionError(EstconvError, ValueError):
    """An operation was called with arguments violating its contract."""


class ConfigError(EstconvError, ValueError):
    """Invalid or missing run configuration."""


class SolverError(EstconvError, RuntimeError):
    """An iterative or direct solver failed.

    ``residual`` carries the last residual or update size when known.
    """

    def __init__(self, message, residual=None, level=None):
        super().__init__(message)
        self.residual = residual
        self.level = level
