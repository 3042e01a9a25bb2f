"""Exception hierarchy; the CLI maps these onto exit codes."""


class AggsolveError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(AggsolveError, ValueError):
    """Inputs are malformed, inconsistent, or outside a method's domain."""

    exit_code = 2


class ValidationError(ConfigurationError):
    """A generated object (e.g. a weight matrix) violates its contract."""


class UnsupportedOperationError(AggsolveError):
    """The requested operation needs data the game does not provide."""

    exit_code = 2


class NumericError(AggsolveError, ArithmeticError):
    """An iterative routine failed or a runtime invariant was breached."""

    exit_code = 3

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
