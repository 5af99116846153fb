"""Prompt encoder: inject a labeled source mask into image features."""

from __future__ import annotations

import math

from torch import Tensor, nn

from .config import ModelConfig
from .layers import LayerNorm2d


class PromptEncoder(nn.Module):
    """Fuses a binary source mask with the source image features.

    The mask runs through a small conv stack whose stride-two layers bring it
    to the same spatial grid as the image features. The mask embedding then
    gates the image features by element-wise multiplication, and two more
    convolutions mix the result:

        F_L = f(L)
        F   = F_I * F_L
        F   = g(F)
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        n_down = int(math.log2(cfg.token_size))
        widths = [cfg.prompt_hidden] * (n_down - 1) + [cfg.channels]
        layers: list[nn.Module] = []
        prev = 1
        for w in widths:
            layers.append(nn.Conv2d(prev, w, kernel_size=2, stride=2))
            layers.append(LayerNorm2d(w))
            layers.append(nn.GELU())
            prev = w
        layers.append(nn.Conv2d(prev, cfg.channels, kernel_size=1))
        self.mask_stack = nn.Sequential(*layers)
        self.mix = nn.Sequential(
            nn.Conv2d(cfg.channels, cfg.channels, kernel_size=3, padding=1),
            nn.GELU(),
            nn.Conv2d(cfg.channels, cfg.channels, kernel_size=3, padding=1),
        )

    def forward(self, image_features: Tensor, mask: Tensor) -> Tensor:
        """image_features: (B, C, G, G); mask: (B, 1, P, P) in {0, 1}."""
        p = self.cfg.patch_size
        if mask.shape[-2:] != (p, p) or mask.shape[1] != 1:
            raise ValueError(f"expected (B, 1, {p}, {p}) mask, got {tuple(mask.shape)}")
        mask_features = self.mask_stack(mask)
        if mask_features.shape != image_features.shape:
            raise ValueError(
                f"mask features {tuple(mask_features.shape)} do not align with "
                f"image features {tuple(image_features.shape)}"
            )
        return self.mix(image_features * mask_features)
