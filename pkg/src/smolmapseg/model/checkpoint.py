"""Checkpoint archive format.

A checkpoint is a zip file holding `config.json` plus one `.npy` entry per
named tensor in the model's state dict. Entry names are group-prefixed with a
forward slash: the prompted model stores `image_encoder/...`,
`prompt_encoder/...` and `mask_decoder/...`; the baseline stores `unet/...`.
`config.json` records the model kind, its configuration, and the class list
the model was trained against (for the baseline, output channel i is class
`classes[i - 1]`, channel 0 is background).
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
import torch
from torch import nn

from .config import ModelConfig, UNetConfig
from .network import SmolMapSeg, build_model
from .unet import BaselineUNet, build_unet

KIND_SMOL = "smolmapseg"
KIND_UNET = "unet"
SMOL_GROUPS = ("image_encoder", "prompt_encoder", "mask_decoder")
DONOR_GROUPS = ("image_encoder", "mask_decoder")


def _entry_name(model: nn.Module, key: str) -> str:
    if isinstance(model, BaselineUNet):
        return f"unet/{key}"
    group, _, rest = key.partition(".")
    if group not in SMOL_GROUPS or not rest:
        raise ValueError(f"state dict key {key!r} is not group-prefixed")
    return f"{group}/{rest}"


def _state_key(kind: str, entry: str) -> str:
    group, _, rest = entry.partition("/")
    if kind == KIND_UNET:
        return rest
    return f"{group}.{rest}"


@dataclass
class Checkpoint:
    kind: str
    config: dict
    classes: list[dict]
    params: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)

    def model_config(self) -> ModelConfig | UNetConfig:
        if self.kind == KIND_UNET:
            return UNetConfig.from_dict(self.config)
        return ModelConfig.from_dict(self.config)


def save_checkpoint(
    path,
    model: nn.Module,
    classes: Iterable[dict] | None = None,
    extra: dict | None = None,
) -> None:
    if isinstance(model, SmolMapSeg):
        kind, config = KIND_SMOL, model.cfg.to_dict()
    elif isinstance(model, BaselineUNet):
        kind, config = KIND_UNET, model.cfg.to_dict()
    else:
        raise TypeError(f"cannot checkpoint a {type(model).__name__}")
    meta = {
        "kind": kind,
        "config": config,
        "classes": list(classes or []),
        "extra": extra or {},
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("config.json", json.dumps(meta, indent=1, sort_keys=True))
        for key, tensor in model.state_dict().items():
            buf = io.BytesIO()
            np.save(buf, tensor.detach().cpu().numpy())
            zf.writestr(_entry_name(model, key) + ".npy", buf.getvalue())


def load_checkpoint(path) -> Checkpoint:
    with zipfile.ZipFile(path, "r") as zf:
        names = set(zf.namelist())
        if "config.json" not in names:
            raise ValueError(f"{path} is not a checkpoint archive: missing config.json")
        meta = json.loads(zf.read("config.json"))
        params = {}
        for name in sorted(names - {"config.json"}):
            if not name.endswith(".npy"):
                raise ValueError(f"unexpected checkpoint entry {name!r}")
            params[name[: -len(".npy")]] = np.load(io.BytesIO(zf.read(name)))
    return Checkpoint(
        kind=meta["kind"],
        config=meta["config"],
        classes=meta.get("classes", []),
        params=params,
        extra=meta.get("extra", {}),
    )


def restore_model(ckpt: Checkpoint) -> SmolMapSeg | BaselineUNet:
    """Build the model a checkpoint describes and load every tensor."""
    cfg = ckpt.model_config()
    model = build_unet(cfg) if ckpt.kind == KIND_UNET else build_model(cfg)
    state = {
        _state_key(ckpt.kind, entry): torch.from_numpy(array)
        for entry, array in ckpt.params.items()
    }
    model.load_state_dict(state, strict=True)
    return model


def load_model(path) -> SmolMapSeg | BaselineUNet:
    return restore_model(load_checkpoint(path))


def load_donor_groups(
    model: SmolMapSeg, ckpt: Checkpoint, groups: tuple[str, ...] = DONOR_GROUPS
) -> list[str]:
    """Copy selected groups from a donor checkpoint, leaving the rest as-is.

    The intended use is warm-starting from a generalist: image encoder and
    mask decoder come from the donor while the prompt encoder trains from
    scratch. Returns the state dict keys that were loaded.
    """
    if ckpt.kind != KIND_SMOL:
        raise ValueError(f"donor checkpoint must be kind {KIND_SMOL!r}, got {ckpt.kind!r}")
    unknown = set(groups) - set(SMOL_GROUPS)
    if unknown:
        raise ValueError(f"unknown donor groups: {sorted(unknown)}")
    state = {}
    for entry, array in ckpt.params.items():
        if entry.partition("/")[0] in groups:
            state[_state_key(ckpt.kind, entry)] = torch.from_numpy(array)
    missing, unexpected = model.load_state_dict(state, strict=False)
    if unexpected:
        raise ValueError(f"donor tensors not present in model: {unexpected}")
    loaded = sorted(state)
    if not loaded:
        raise ValueError("donor checkpoint contributed no tensors")
    return loaded
