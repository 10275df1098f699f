"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid scenario, market or training configuration."""


class InvariantError(RuntimeError):
    """An internal consistency check failed (conservation, bounds, ...)."""


class TrainingDivergedError(RuntimeError):
    """Raised when a loss or network output becomes non-finite."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
