"""Mask decoder: turn target features plus prompt features into logits."""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

from .config import ModelConfig
from .layers import Attention, LayerNorm2d, TwoWayAttentionBlock


class MaskDecoder(nn.Module):
    """Two-way transformer decoder with a single learned mask token.

    Prompt and target feature grids are fused by addition. The mask token and
    the fused grid exchange information through a short stack of two-way
    attention blocks, the grid is upscaled back to pixel resolution with
    transposed convolutions, and a small hypernetwork turns the mask token
    into the per-pixel classifier weights. Logits are the dot product of that
    weight vector with the upscaled per-pixel embeddings.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        g = cfg.grid_size
        self.mask_token = nn.Parameter(torch.zeros(1, 1, c))
        nn.init.trunc_normal_(self.mask_token, std=0.02)
        self.grid_pos_embed = nn.Parameter(torch.zeros(1, g * g, c))
        nn.init.trunc_normal_(self.grid_pos_embed, std=0.02)
        self.blocks = nn.ModuleList(
            TwoWayAttentionBlock(c, cfg.heads, skip_first_layer_pe=(i == 0))
            for i in range(cfg.decoder_depth)
        )
        self.final_attn_token_to_image = Attention(c, cfg.heads, downsample_rate=2)
        self.norm_final = nn.LayerNorm(c)

        n_up = int(math.log2(cfg.resolved_upsample))
        out_ch = c
        ups: list[nn.Module] = []
        for i in range(n_up):
            nxt = max(8, out_ch // (4 if i == 0 else 2))
            ups.append(nn.ConvTranspose2d(out_ch, nxt, kernel_size=2, stride=2))
            if i < n_up - 1:
                ups.append(LayerNorm2d(nxt))
            ups.append(nn.GELU())
            out_ch = nxt
        self.upscaler = nn.Sequential(*ups)
        self.pixel_dim = out_ch
        self.hypernet = nn.Sequential(
            nn.Linear(c, c), nn.GELU(), nn.Linear(c, self.pixel_dim)
        )

    def forward(self, target_features: Tensor, prompt_features: Tensor) -> Tensor:
        """Both inputs (B, C, G, G); returns mask logits (B, P, P)."""
        if target_features.shape != prompt_features.shape:
            raise ValueError("target and prompt feature grids must match")
        b, c, g, _ = target_features.shape
        fused = target_features + prompt_features
        grid = fused.flatten(2).transpose(1, 2)  # B, G*G, C
        grid_pe = self.grid_pos_embed.expand(b, -1, -1)
        tokens = self.mask_token.expand(b, -1, -1)
        token_pe = self.mask_token.expand(b, -1, -1)

        for blk in self.blocks:
            tokens, grid = blk(tokens, grid, token_pe, grid_pe)

        q = tokens + token_pe
        k = grid + grid_pe
        tokens = tokens + self.final_attn_token_to_image(q, k, grid)
        tokens = self.norm_final(tokens)

        grid = grid.transpose(1, 2).reshape(b, c, g, g)
        pixels = self.upscaler(grid)  # B, pixel_dim, P, P
        weights = self.hypernet(tokens[:, 0, :])  # B, pixel_dim
        logits = torch.einsum("bc,bchw->bhw", weights, pixels)
        return logits
