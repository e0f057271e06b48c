"""Exception hierarchy. Each class maps to a CLI exit code."""


class CohortForgeError(Exception):
    exit_code = 1


class ConfigError(CohortForgeError, ValueError):
    exit_code = 2


class DataError(CohortForgeError, ValueError):
    exit_code = 3


class NumericError(CohortForgeError, ArithmeticError):
    """Numerical routine failed to converge or hit its iteration cap."""

    exit_code = 4

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})
