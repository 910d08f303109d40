class BerryCountError(Exception):
    """Base for all errors raised by berrycount."""


class FormatError(BerryCountError, ValueError):
    """Malformed file or stream (PGM, CSV, grid manifest, config)."""


class ConfigError(BerryCountError, ValueError):
    """Unknown key, unparsable value or out-of-range setting."""


class SceneError(BerryCountError, ValueError):
    """Scene specification that cannot produce a usable scene."""
