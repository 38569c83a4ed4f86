"""Exception types raised by curesem."""


class CuresemError(Exception):
    """Base class for all package errors."""


class DomainError(CuresemError, ValueError):
    """An argument lies outside the domain of the function."""


class HazardOverflowError(CuresemError, ArithmeticError):
    """The hazard is infinite because the survival function underflowed."""


class DegenerateTruncationError(CuresemError, ArithmeticError):
    """Truncated sampling requested where the survival mass is numerically zero."""


class NonConvergenceError(CuresemError, RuntimeError):
    """An iterative computation exhausted its budget."""


class SingularInformationError(CuresemError, ArithmeticError):
    """The observed information matrix cannot be inverted."""


class NestingError(CuresemError, ValueError):
    """A null model fits better than the model it is nested in."""


class DataFormatError(CuresemError, ValueError):
    """A dataset file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InitialValueError(CuresemError, ValueError):
    """The initial-value heuristic could not produce a start."""


class ConfigError(CuresemError, ValueError):
    """A study or run configuration failed validation."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
