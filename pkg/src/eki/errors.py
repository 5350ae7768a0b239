"""Exception types shared across the package."""


class EkiError(Exception):
    """Base class for package errors."""


class ConfigError(EkiError):
    """Invalid configuration: unknown keys, bad values, missing files."""


class NumericalError(EkiError):
    """Numerical failure: indefinite factorisation, unreachable search, singular system."""
