class ConfigurationError(ValueError):
    """Invalid parameters, schedules, or search configuration."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of an operation."""


class CalibrationError(RuntimeError):
    """Every candidate weight vector was degenerate."""
