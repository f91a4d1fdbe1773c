class ConfigurationError(ValueError):
    """Invalid configuration or input file (CLI exit code 2)."""


class NumericalError(RuntimeError):
    """Numerical failure, e.g. degenerate geometry or solver breakdown (CLI exit code 3)."""
