"""Video frame interpolation with windowed inter-frame attention."""

from .backbone import ModelConfig
from .synthesis import FeatureCache, FrameInterpolator, interpolate

__all__ = ["FeatureCache", "FrameInterpolator", "ModelConfig", "interpolate"]
__version__ = "0.1.0"
