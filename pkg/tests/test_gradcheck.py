"""Central finite-difference gradient checks on toy configurations.

Each check builds a small module in float64, projects its output to a
scalar through a fixed random weighting, and compares autograd against
central differences along random directions plus sampled coordinates.
The tolerance is a relative error of 1e-3. The run_* functions return the
worst relative error so the acceptance gate can reuse them.
"""

from __future__ import annotations

import numpy as np
import torch
import pytest

from smolmapseg.model import ModelConfig, UNetConfig, build_unet
from smolmapseg.model.decoder import MaskDecoder
from smolmapseg.model.prompt import PromptEncoder

from conftest import gradcheck_module, scalar_projection_loss

TOL = 1e-3


def _seeded(module: torch.nn.Module, seed: int) -> torch.nn.Module:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        for m in module.modules():
            if isinstance(m, (torch.nn.Conv2d, torch.nn.ConvTranspose2d, torch.nn.Linear)):
                torch.nn.init.normal_(m.weight, std=0.2)
                if m.bias is not None:
                    torch.nn.init.normal_(m.bias, std=0.1)
    return module.double()


def run_prompt_encoder_check() -> float:
    # 16x16 mask, token_size 4 -> 4x4 grid of 8 channels.
    cfg = ModelConfig(
        patch_size=16, token_size=4, channels=8,
        encoder_depth=1, decoder_depth=1, prompt_hidden=4, heads=2,
    )
    enc = _seeded(PromptEncoder(cfg), seed=7)
    rng = np.random.default_rng(7)
    feats = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)))
    mask = torch.from_numpy((rng.random((1, 1, 16, 16)) < 0.4).astype(np.float64))
    proj = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)))

    def fn():
        return scalar_projection_loss(enc(feats, mask), proj)

    return gradcheck_module(enc, fn, np.random.default_rng(17))


def run_mask_decoder_check() -> float:
    # 8x8 grid of 16 channels through the full two-way stack.
    cfg = ModelConfig(
        patch_size=32, token_size=4, channels=16,
        encoder_depth=1, decoder_depth=2, prompt_hidden=4, heads=2,
    )
    dec = _seeded(MaskDecoder(cfg), seed=11)
    rng = np.random.default_rng(11)
    target = torch.from_numpy(rng.standard_normal((1, 16, 8, 8)))
    prompt = torch.from_numpy(rng.standard_normal((1, 16, 8, 8)))
    proj = torch.from_numpy(rng.standard_normal((1, 32, 32)))

    def fn():
        return scalar_projection_loss(dec(target, prompt), proj)

    return gradcheck_module(dec, fn, np.random.default_rng(23))


def run_unet_check() -> float:
    cfg = UNetConfig(
        patch_size=16, in_channels=3, out_channels=3,
        levels=2, base_channels=4,
    )
    net = build_unet(cfg, seed=0).double()
    rng = np.random.default_rng(19)
    image = torch.from_numpy(rng.random((1, 3, 16, 16)))
    proj = torch.from_numpy(rng.standard_normal((1, 3, 16, 16)))

    def fn():
        return scalar_projection_loss(net(image), proj)

    # ReLU leaves some parameters with ~zero gradient; treat anything
    # below 1e-6 as zero so cancellation noise is not scored.
    return gradcheck_module(net, fn, np.random.default_rng(29), floor=1e-6)


class TestPromptEncoderGradients:
    def test_prompt_encoder_matches_finite_differences(self):
        worst = run_prompt_encoder_check()
        assert worst <= TOL, f"worst relative error {worst:.2e}"

    def test_gradients_flow_to_every_prompt_parameter(self):
        # The scalar must depend on both the mask stack and the mix convs.
        cfg = ModelConfig(
            patch_size=16, token_size=4, channels=8,
            encoder_depth=1, decoder_depth=1, prompt_hidden=4, heads=2,
        )
        enc = _seeded(PromptEncoder(cfg), seed=3)
        rng = np.random.default_rng(3)
        feats = torch.from_numpy(rng.standard_normal((1, 8, 4, 4)))
        mask = torch.from_numpy((rng.random((1, 1, 16, 16)) < 0.5).astype(np.float64))
        loss = enc(feats, mask).square().sum()
        loss.backward()
        for name, p in enc.named_parameters():
            assert p.grad is not None and p.grad.abs().sum() > 0, name


class TestMaskDecoderGradients:
    def test_decoder_matches_finite_differences(self):
        worst = run_mask_decoder_check()
        assert worst <= TOL, f"worst relative error {worst:.2e}"

    def test_gradients_reach_token_and_upscaler(self):
        cfg = ModelConfig(
            patch_size=32, token_size=4, channels=16,
            encoder_depth=1, decoder_depth=2, prompt_hidden=4, heads=2,
        )
        dec = _seeded(MaskDecoder(cfg), seed=5)
        rng = np.random.default_rng(5)
        target = torch.from_numpy(rng.standard_normal((1, 16, 8, 8)))
        prompt = torch.from_numpy(rng.standard_normal((1, 16, 8, 8)))
        dec(target, prompt).square().sum().backward()
        for name, p in dec.named_parameters():
            assert p.grad is not None and p.grad.abs().sum() > 0, name


class TestUNetGradients:
    def test_two_level_unet_matches_finite_differences(self):
        worst = run_unet_check()
        assert worst <= TOL, f"worst relative error {worst:.2e}"


@pytest.mark.parametrize("dtype", [torch.float64])
def test_checks_run_in_sixty_four_bit(dtype):
    # Guard against a silent downcast in the helpers: a float32 parameter
    # would make 1e-5 central differences unreliable.
    cfg = ModelConfig(
        patch_size=16, token_size=4, channels=8,
        encoder_depth=1, decoder_depth=1, prompt_hidden=4, heads=2,
    )
    enc = _seeded(PromptEncoder(cfg), seed=1)
    assert all(p.dtype == dtype for p in enc.parameters())
