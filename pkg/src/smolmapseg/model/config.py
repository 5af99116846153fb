"""Model configuration shared by the encoder, prompt encoder and decoder."""

from __future__ import annotations

from dataclasses import asdict, dataclass


@dataclass(frozen=True)
class ModelConfig:
    patch_size: int = 64  # P, pixels per patch side
    token_size: int = 4  # pixels per encoder token side; also the feature stride
    channels: int = 128  # embedding width everywhere the grids meet
    encoder_depth: int = 4
    decoder_depth: int = 2
    prompt_hidden: int = 64  # width of the prompt stack's first conv
    prompt_out: int | None = None  # must match channels; None means channels
    heads: int = 4
    upsample_factor: int | None = None  # decoder upsample back to P; None: token_size

    def __post_init__(self):
        if self.patch_size % 16 != 0:
            raise ValueError(f"patch_size must be a multiple of 16, got {self.patch_size}")
        if self.patch_size % self.token_size != 0:
            raise ValueError(
                f"patch_size {self.patch_size} not divisible by token_size {self.token_size}"
            )
        if self.token_size < 2 or self.token_size & (self.token_size - 1):
            raise ValueError("token_size must be a power of two >= 2")
        if self.channels % self.heads != 0:
            raise ValueError("channels must divide evenly into heads")
        if self.prompt_out is not None and self.prompt_out != self.channels:
            raise ValueError(
                f"prompt encoder output width {self.prompt_out} must equal "
                f"channels {self.channels} for fusion"
            )
        if self.upsample_factor is not None and self.upsample_factor != self.token_size:
            raise ValueError(
                "upsample_factor must equal token_size so logits return to patch size"
            )

    @property
    def grid_size(self) -> int:
        return self.patch_size // self.token_size

    @property
    def resolved_upsample(self) -> int:
        return self.upsample_factor or self.token_size

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "ModelConfig":
        return ModelConfig(**raw)


@dataclass(frozen=True)
class UNetConfig:
    patch_size: int = 64
    in_channels: int = 3
    out_channels: int = 4  # classes + background
    levels: int = 3
    base_channels: int = 16

    def __post_init__(self):
        if self.patch_size % (2**self.levels) != 0:
            raise ValueError("patch_size must be divisible by 2**levels")
        if self.out_channels < 2:
            raise ValueError("need at least background plus one class")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(raw: dict) -> "UNetConfig":
        return UNetConfig(**raw)
