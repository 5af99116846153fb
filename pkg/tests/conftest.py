"""Shared fixtures and finite-difference helpers."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from smolmapseg import presets
from smolmapseg.datapipe import build_dataset
from smolmapseg.synthmap import make_ambiguity_suite


def pytest_configure(config):
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def smoke_dataset():
    amb = presets.smoke_dataset_config()
    sheets = make_ambiguity_suite(amb)
    return build_dataset(
        sheets, amb.classes, amb.styles, amb.patch_size, min_pixels=amb.min_pixels
    )


@pytest.fixture(scope="session")
def smoke_sheets():
    amb = presets.smoke_dataset_config()
    return make_ambiguity_suite(amb), amb


def scalar_projection_loss(output: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Fixed random projection turning any output tensor into one scalar."""
    return (output * weights).sum()


def directional_derivative(fn, params: list[torch.Tensor], direction: list[torch.Tensor], h: float) -> float:
    """Central difference of fn along a parameter-space direction."""
    with torch.no_grad():
        for p, d in zip(params, direction):
            p += h * d
        up = float(fn())
        for p, d in zip(params, direction):
            p -= 2 * h * d
        down = float(fn())
        for p, d in zip(params, direction):
            p += h * d
    return (up - down) / (2 * h)


def gradcheck_module(module: torch.nn.Module, fn, rng: np.random.Generator,
                     n_coords: int = 150, h: float = 1e-5, tol: float = 1e-3,
                     floor: float = 1e-8) -> float:
    """Central finite differences vs autograd for a scalar-valued closure.

    Checks the full gradient along several random directions plus a seeded
    subsample of individual parameter coordinates. Returns the worst relative
    error; asserts nothing (callers compare against tol).

    The module must be in float64. `floor` is the scale below which a
    coordinate counts as zero; central differences carry cancellation noise
    of roughly eps * |f| / (2h), so nets with dead paths (ReLU) need a floor
    comfortably above that while staying far below real gradient magnitudes.
    """
    params = [p for p in module.parameters() if p.requires_grad]
    module.zero_grad()
    loss = fn()
    loss.backward()
    grads = [p.grad.detach().clone() for p in params]

    worst = 0.0

    def rel_err(a: float, b: float) -> float:
        scale = max(abs(a), abs(b), floor)
        return abs(a - b) / scale

    for _ in range(4):
        direction = [torch.from_numpy(rng.standard_normal(tuple(p.shape))) for p in params]
        analytic = sum(float((g * d).sum()) for g, d in zip(grads, direction))
        numeric = directional_derivative(fn, params, direction, h)
        worst = max(worst, rel_err(analytic, numeric))

    flat_sizes = [p.numel() for p in params]
    total = sum(flat_sizes)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    bounds = np.cumsum([0] + flat_sizes)
    for flat_idx in coords:
        pi = int(np.searchsorted(bounds, flat_idx, side="right") - 1)
        local = int(flat_idx - bounds[pi])
        p = params[pi]
        with torch.no_grad():
            orig = float(p.view(-1)[local])
            p.view(-1)[local] = orig + h
            up = float(fn())
            p.view(-1)[local] = orig - h
            down = float(fn())
            p.view(-1)[local] = orig
        numeric = (up - down) / (2 * h)
        analytic = float(grads[pi].view(-1)[local])
        worst = max(worst, rel_err(analytic, numeric))
    return worst
