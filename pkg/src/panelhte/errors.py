"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Raised when an input violates a documented precondition."""


class ConfigError(ValidationError):
    """Raised when an experiment or estimator configuration is malformed."""


class InfeasibleSignalError(ValidationError):
    """Raised when a requested signal cannot satisfy all scaling constraints."""
