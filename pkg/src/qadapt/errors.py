"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Raised when a config value is out of its documented range."""


class DatasetParseError(ValueError):
    """Raised when an input file violates its declared schema."""
