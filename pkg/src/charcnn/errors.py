"""Exception types shared across the package."""


class CharCNNError(Exception):
    """Base class for every error raised by charcnn."""


class ShapeError(CharCNNError, ValueError):
    pass


class SizeError(CharCNNError, ValueError):
    pass


class ConfigError(CharCNNError, ValueError):
    pass


class InputError(CharCNNError, ValueError):
    pass


class StateError(CharCNNError, RuntimeError):
    pass


class ParseError(CharCNNError, ValueError):
    """Malformed on-disk data (IDX, PGM, checkpoint, config)."""


class CompatibilityError(CharCNNError, ValueError):
    pass
