"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid or inconsistent configuration (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Non-finite values or a singular system encountered mid-computation (CLI exit code 3)."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class FormatError(ValueError):
    """A binary artifact has the wrong magic, version or checksum."""
