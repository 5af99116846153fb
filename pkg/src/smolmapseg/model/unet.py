"""Plain UNet baseline for per-pixel multi-class segmentation."""

from __future__ import annotations

import numpy as np
import torch
from torch import Tensor, nn

from .config import UNetConfig


def _double_conv(in_ch: int, out_ch: int) -> nn.Sequential:
    groups = 8 if out_ch % 8 == 0 else 1
    return nn.Sequential(
        nn.Conv2d(in_ch, out_ch, 3, padding=1),
        nn.GroupNorm(groups, out_ch),
        nn.ReLU(inplace=True),
        nn.Conv2d(out_ch, out_ch, 3, padding=1),
        nn.GroupNorm(groups, out_ch),
        nn.ReLU(inplace=True),
    )


class BaselineUNet(nn.Module):
    """Symmetric encoder-decoder with skip connections.

    Outputs one logit map per class id (channel 0 is background), so the
    baseline must commit to a fixed class list at build time. That inability
    to condition on anything but the pixels is exactly what the prompted
    model is compared against.
    """

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        chans = [cfg.base_channels * (2**i) for i in range(cfg.levels + 1)]
        self.downs = nn.ModuleList()
        prev = cfg.in_channels
        for ch in chans[:-1]:
            self.downs.append(_double_conv(prev, ch))
            prev = ch
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = _double_conv(prev, chans[-1])
        self.ups = nn.ModuleList()
        self.up_convs = nn.ModuleList()
        for ch in reversed(chans[:-1]):
            self.ups.append(nn.ConvTranspose2d(ch * 2, ch, kernel_size=2, stride=2))
            self.up_convs.append(_double_conv(ch * 2, ch))
        self.head = nn.Conv2d(chans[0], cfg.out_channels, kernel_size=1)

    def forward(self, images: Tensor) -> Tensor:
        """(B, 3, P, P) in [0, 1] -> (B, out_channels, P, P) logits."""
        if images.shape[-1] % (2**self.cfg.levels) != 0:
            raise ValueError("input side must be divisible by 2**levels")
        skips = []
        x = images
        for down in self.downs:
            x = down(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, conv, skip in zip(self.ups, self.up_convs, reversed(skips)):
            x = up(x)
            x = conv(torch.cat([skip, x], dim=1))
        return self.head(x)

    @torch.no_grad()
    def predict(self, image: np.ndarray) -> np.ndarray:
        """(P, P, 3) uint8 -> (P, P) argmax class ids indexed by channel."""
        self.eval()
        dev = next(self.parameters()).device
        x = torch.from_numpy(np.ascontiguousarray(image[None])).to(torch.float32) / 255.0
        x = x.permute(0, 3, 1, 2).to(dev)
        logits = self.forward(x)
        return logits.argmax(dim=1)[0].cpu().numpy().astype(np.int64)


def build_unet(cfg: UNetConfig, seed: int = 0) -> BaselineUNet:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = BaselineUNet(cfg)
    return model
