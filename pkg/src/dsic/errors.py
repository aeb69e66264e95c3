"""Exception types shared across the package."""


class DsicError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(DsicError, ValueError):
    pass


class NonScalarLoss(DsicError, ValueError):
    pass


class DegenerateOutput(DsicError, ValueError):
    pass


class InvalidFactor(DsicError, ValueError):
    pass


class BadInputSize(DsicError, ValueError):
    pass


class ConfigError(DsicError, ValueError):
    """Semantically invalid run configuration (bad topology/mode combination etc.)."""


class ConfigParseError(DsicError, ValueError):
    """Config text could not be parsed."""
