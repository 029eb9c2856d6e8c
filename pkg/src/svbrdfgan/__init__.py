"""SVBRDF estimation from a handful of collocated-flash photographs.

The package is a numpy-only pipeline: a differentiable Cook-Torrance
renderer, a small reverse-mode autodiff engine, the encoder/two-decoder GAN
trained against a min-composited guessed diffuse map, image alignment, and
an evaluation bench on synthetic fixtures.
"""

__version__ = "0.1.0"

from .brdf import DirectionField, SvbrdfMaps, decode_maps, direction_field, render, render_gradients  # noqa: E402
from .config import ConfigError, TrainConfig  # noqa: E402
from .imaging import LinearImage, load_image, save_image  # noqa: E402

__all__ = [
    "ConfigError", "DirectionField", "LinearImage", "SvbrdfMaps", "TrainConfig", "decode_maps",
    "direction_field", "load_image", "render", "render_gradients", "save_image",
]
