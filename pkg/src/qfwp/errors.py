"""Exception types shared across the package."""


class QfwpError(Exception):
    pass


class ConfigurationError(QfwpError, ValueError):
    """Invalid configuration value (qubit count, grid size, mode name, ...)."""


class ArgumentError(QfwpError, ValueError):
    """Bad argument to an operation: wrong shape, index out of range, non-finite value."""


class StateError(QfwpError, RuntimeError):
    """Operation called in the wrong state (reused tape, stepping a finished episode)."""


class FormatError(QfwpError, ValueError):
    """Malformed checkpoint or config file."""

    def __init__(self, message, field=None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class NumericError(QfwpError, ArithmeticError):
    pass
