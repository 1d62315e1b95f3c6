"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not conform."""


class DomainError(ValueError):
    """Input outside the domain of an operation."""


class StateError(RuntimeError):
    """Operation invoked in an invalid tape state."""


class ConfigError(ValueError):
    """Invalid configuration value; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class SchemaError(ValueError):
    """Input table does not match the declared column schema."""


class DataError(ValueError):
    """Unreadable or malformed input data."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step
