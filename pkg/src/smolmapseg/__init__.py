"""Prompted one-class segmentation of procedurally generated map sheets."""

__version__ = "0.1.0"

from . import datapipe, evaluation, presets, sampler, synthmap, training
from .model import ModelConfig, SmolMapSeg, UNetConfig, build_model, build_unet

__all__ = [
    "ModelConfig",
    "SmolMapSeg",
    "UNetConfig",
    "__version__",
    "build_model",
    "build_unet",
    "datapipe",
    "evaluation",
    "presets",
    "sampler",
    "synthmap",
    "training",
]
