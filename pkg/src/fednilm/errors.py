class ConfigError(ValueError):
    """Invalid configuration (network spec, FL/privacy settings, experiment file)."""


class DataError(ValueError):
    """Malformed or insufficient input data."""


class ShapeError(ValueError):
    """Array shape or parameter manifest mismatch."""
