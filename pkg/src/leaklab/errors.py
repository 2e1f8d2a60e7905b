"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration value is missing, malformed, or inconsistent."""


class ParseError(ValueError):
    """Assembly text could not be parsed. Carries the 1-based source line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class TrainingFault(RuntimeError):
    """Training produced a non-finite quantity and cannot continue."""
