"""
Error types for the recognition app.

Every error carries the process exit code the management commands report:
1 usage error, 2 data error, 3 numerical failure.
"""


class RecognitionError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 2


class ConfigurationError(RecognitionError):
    """Invalid configuration or command-line usage."""

    exit_code = 1


class DataError(RecognitionError, ValueError):
    """Malformed, inconsistent or unusable input data."""

    exit_code = 2


class NumericalError(RecognitionError, ArithmeticError):
    """A numerical routine failed (non-PD kernel, failed optimization)."""

    exit_code = 3


class StageError(RecognitionError):
    """A pipeline stage failed; wraps the original error and names the stage."""

    def __init__(self, stage: str, error: Exception):
        self.stage = stage
        self.error = error
        self.exit_code = getattr(error, 'exit_code', 2)
        super().__init__(f"stage '{stage}' failed: {error}")
