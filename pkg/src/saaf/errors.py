"""Exception hierarchy shared across the package."""


class SaafError(Exception):
    """Base class for all package errors."""


class UsageError(SaafError, ValueError):
    """Invalid arguments or configuration (CLI exit code 2)."""


class DataError(SaafError, ValueError):
    """Malformed or non-finite input data."""


class IngestionError(DataError):
    """CSV ingestion failure; ``lines`` lists the offending 1-based line numbers."""

    def __init__(self, message, lines=()):
        super().__init__(message)
        self.lines = list(lines)


class TrainingError(SaafError, RuntimeError):
    """Training diverged or produced a non-finite gradient."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class SolverError(SaafError, RuntimeError):
    """Linear system could not be solved (singular or ill-posed)."""
