"""Berry counting from berry/edge/background semantic segmentation masks."""
from .errors import BerryCountError, ConfigError, FormatError, SceneError
from .raster import Cls, DotSet, GrayImage, InstanceMap, SemanticMask

__all__ = [
    "BerryCountError",
    "Cls",
    "ConfigError",
    "DotSet",
    "FormatError",
    "GrayImage",
    "InstanceMap",
    "SceneError",
    "SemanticMask",
]
__version__ = "0.1.0"
