from .checkpoint import (
    DONOR_GROUPS,
    KIND_SMOL,
    KIND_UNET,
    SMOL_GROUPS,
    Checkpoint,
    load_checkpoint,
    load_donor_groups,
    load_model,
    restore_model,
    save_checkpoint,
)
from .config import ModelConfig, UNetConfig
from .decoder import MaskDecoder
from .encoder import ImageEncoder
from .network import SmolMapSeg, build_model, images_to_tensor, masks_to_tensor
from .prompt import PromptEncoder
from .unet import BaselineUNet, build_unet

__all__ = [
    "BaselineUNet",
    "Checkpoint",
    "DONOR_GROUPS",
    "KIND_SMOL",
    "KIND_UNET",
    "SMOL_GROUPS",
    "ImageEncoder",
    "MaskDecoder",
    "ModelConfig",
    "PromptEncoder",
    "SmolMapSeg",
    "UNetConfig",
    "build_model",
    "build_unet",
    "images_to_tensor",
    "load_checkpoint",
    "load_donor_groups",
    "load_model",
    "masks_to_tensor",
    "restore_model",
    "save_checkpoint",
]
