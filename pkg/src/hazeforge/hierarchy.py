"""Common container for the three-level encoder/decoder hierarchies."""
from __future__ import annotations

import torch
from torch import nn

from .codec import ChannelConfig, build_level_blocks
from .errors import ConfigError, ShapeError


class HierarchicalModel(nn.Module):
    """Three encoder/decoder pairs, ``enc1``/``dec1`` being the top (full-image) level."""

    kind = ""
    divisor = 1

    def __init__(self, encoders, decoders):
        super().__init__()
        if len(encoders) != 3 or len(decoders) != 3:
            raise ConfigError("a hierarchy needs exactly 3 encoders and 3 decoders")
        cfgs = {b.cfg for b in (*encoders, *decoders)}
        if len(cfgs) != 1:
            raise ConfigError("all levels must share one ChannelConfig")
        self.cfg = cfgs.pop()
        self.enc1, self.enc2, self.enc3 = encoders
        self.dec1, self.dec2, self.dec3 = decoders

    @classmethod
    def build(cls, cfg: ChannelConfig | None = None, seed: int = 0):
        encoders, decoders = build_level_blocks(cfg or ChannelConfig(), seed)
        return cls(encoders, decoders)

    def blocks(self):
        """The six blocks in canonical (serialization) order."""
        return [self.enc1, self.dec1, self.enc2, self.dec2, self.enc3, self.dec3]


def check_divisible(x: torch.Tensor, divisor: int, who: str):
    for name, size in (("height", x.shape[-2]), ("width", x.shape[-1])):
        if size % divisor:
            raise ShapeError(f"{who}: input {name} {size} is not divisible by {divisor}")


def add_aligned(a: torch.Tensor, b: torch.Tensor, where: str) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(
            f"internal wiring mismatch at {where}: {tuple(a.shape)} vs {tuple(b.shape)}"
        )
    return a + b
