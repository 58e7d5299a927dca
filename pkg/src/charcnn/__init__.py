"""Convolutional character recognizer written directly on numpy."""

from .errors import (
    CharCNNError,
    CompatibilityError,
    ConfigError,
    InputError,
    ParseError,
    ShapeError,
    SizeError,
    StateError,
)
from .model import DESK_CONFIG, FULL_CONFIG, Model, ModelConfig, backward, build, forward

__version__ = "0.1.0"

__all__ = [
    "CharCNNError",
    "CompatibilityError",
    "ConfigError",
    "DESK_CONFIG",
    "InputError",
    "Model",
    "ModelConfig",
    "FULL_CONFIG",
    "ParseError",
    "ShapeError",
    "SizeError",
    "StateError",
    "backward",
    "build",
    "forward",
]
