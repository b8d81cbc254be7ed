"""Exception types shared across the package."""


class StructuralError(ValueError):
    """A field, grid, or array has an inconsistent shape or invalid entries."""


class ConfigurationError(ValueError):
    """A run configuration is invalid; ``field`` names the offending entry."""

    def __init__(self, message, field=None):
        self.field = field
        self.message = message
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class DivergenceError(RuntimeError):
    """An iteration or time-stepping loop produced non-finite values."""


class StagnationError(RuntimeError):
    """Backtracking exhausted without a residual decrease.

    Carries a ``diagnostics`` dict (iteration index, residual, step size)
    to make post-mortems possible without rerunning.
    """

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
