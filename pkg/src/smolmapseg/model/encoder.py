"""ViT-style image encoder producing a coarse feature grid."""

from __future__ import annotations

import torch
from torch import Tensor, nn

from .config import ModelConfig
from .layers import TransformerBlock


class ImageEncoder(nn.Module):
    """Embeds a patch into a C x G x G feature grid.

    The stem is a single convolution with kernel and stride equal to the
    token size, so each spatial token covers one non-overlapping square of
    pixels. A learned positional embedding is added before the transformer
    stack.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        g = cfg.grid_size
        self.patch_embed = nn.Conv2d(
            3, cfg.channels, kernel_size=cfg.token_size, stride=cfg.token_size
        )
        self.pos_embed = nn.Parameter(torch.zeros(1, g * g, cfg.channels))
        nn.init.trunc_normal_(self.pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.channels, cfg.heads) for _ in range(cfg.encoder_depth)
        )
        self.norm = nn.LayerNorm(cfg.channels)

    def forward(self, images: Tensor) -> Tensor:
        """images: (B, 3, P, P) floats in [0, 1] -> (B, C, G, G) features."""
        b, c, h, w = images.shape
        p = self.cfg.patch_size
        if c != 3 or h != p or w != p:
            raise ValueError(f"expected (B, 3, {p}, {p}) input, got {tuple(images.shape)}")
        x = self.patch_embed(images)  # B, C, G, G
        g = x.shape[-1]
        x = x.flatten(2).transpose(1, 2)  # B, G*G, C
        x = x + self.pos_embed
        for blk in self.blocks:
            x = blk(x)
        x = self.norm(x)
        return x.transpose(1, 2).reshape(b, self.cfg.channels, g, g)
