"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Malformed input: files, annotations, shapes, or configuration."""


class NumericError(RuntimeError):
    """A computation produced non-finite values.

    ``stage`` names the pipeline stage that failed so callers (and the CLI
    exit path) can report where the numbers went bad.
    """

    def __init__(self, message: str, stage: str = ""):
        super().__init__(message)
        self.stage = stage
