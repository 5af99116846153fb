"""The full prompted segmentation network and tensor conversion helpers."""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor, nn

from .config import ModelConfig
from .decoder import MaskDecoder
from .encoder import ImageEncoder
from .prompt import PromptEncoder


class SmolMapSeg(nn.Module):
    """Prompted one-class segmentation.

    A labeled source patch (image plus binary mask for one class) conditions
    the segmentation of a target patch. Source and target share the same
    image encoder; the prompt encoder fuses the source mask into the source
    features; the decoder reads the target features together with the prompt
    features and emits one mask logit per pixel.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.image_encoder = ImageEncoder(cfg)
        self.prompt_encoder = PromptEncoder(cfg)
        self.mask_decoder = MaskDecoder(cfg)

    def forward(
        self, target_image: Tensor, source_image: Tensor, source_mask: Tensor
    ) -> Tensor:
        """All images (B, 3, P, P) in [0, 1]; mask (B, 1, P, P). Returns (B, P, P)."""
        p = self.cfg.patch_size
        b = target_image.shape[0]
        for name, x, ch in (
            ("target_image", target_image, 3),
            ("source_image", source_image, 3),
            ("source_mask", source_mask, 1),
        ):
            if x.ndim != 4 or x.shape[0] != b or x.shape[1:] != (ch, p, p):
                raise ValueError(
                    f"{name} must be ({b}, {ch}, {p}, {p}), got {tuple(x.shape)}"
                )
        both = torch.cat([target_image, source_image], dim=0)
        feats = self.image_encoder(both)
        target_feats, source_feats = feats[:b], feats[b:]
        prompt_feats = self.prompt_encoder(source_feats, source_mask)
        return self.mask_decoder(target_feats, prompt_feats)

    @torch.no_grad()
    def predict(
        self,
        source_image: np.ndarray,
        source_mask: np.ndarray,
        target_image: np.ndarray,
        threshold: float = 0.5,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Run one prompted pair on numpy arrays.

        source_image/target_image: (P, P, 3) uint8. source_mask: (P, P) in
        {0, 1}. Returns (binary mask, probabilities), both (P, P).
        """
        self.eval()
        dev = next(self.parameters()).device
        ti = images_to_tensor(target_image[None]).to(dev)
        si = images_to_tensor(source_image[None]).to(dev)
        sm = masks_to_tensor(source_mask[None]).to(dev)
        probs = torch.sigmoid(self.forward(ti, si, sm))[0].cpu().numpy()
        return (probs >= threshold).astype(np.uint8), probs


def images_to_tensor(images: np.ndarray) -> Tensor:
    """(B, P, P, 3) uint8 -> (B, 3, P, P) float32 in [0, 1]."""
    if images.ndim != 4 or images.shape[-1] != 3:
        raise ValueError(f"expected (B, P, P, 3) images, got {images.shape}")
    x = torch.from_numpy(np.ascontiguousarray(images)).to(torch.float32) / 255.0
    return x.permute(0, 3, 1, 2)


def masks_to_tensor(masks: np.ndarray) -> Tensor:
    """(B, P, P) binary -> (B, 1, P, P) float32."""
    if masks.ndim != 3:
        raise ValueError(f"expected (B, P, P) masks, got {masks.shape}")
    return torch.from_numpy(np.ascontiguousarray(masks)).to(torch.float32)[:, None]


def build_model(cfg: ModelConfig, seed: int = 0) -> SmolMapSeg:
    """Build with deterministic initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = SmolMapSeg(cfg)
    return model
