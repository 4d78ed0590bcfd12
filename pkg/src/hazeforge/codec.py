"""Encoder and decoder blocks shared by every level of both hierarchies.

Encoder: three stages, each a head convolution followed by two residual
blocks (conv - ReLU - conv + identity).  Stage 1 keeps resolution, stages 2
and 3 halve it.  The decoder mirrors this, with the two resolution-changing
heads swapped for 4x4 stride-2 transposed convolutions and a final projection
to 3 channels.  Each block therefore has 15 convolution-type layers, 6
identity skips and 6 ReLUs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError

ENCODER_STRIDE = 4
UPCONV_KERNEL = 4


@dataclass(frozen=True)
class ChannelConfig:
    base_channels: tuple[int, int, int] = (32, 64, 128)
    kernel_size: int = 3
    in_channels: int = 3
    out_channels: int = 3

    def __post_init__(self):
        chans = tuple(int(c) for c in self.base_channels)
        object.__setattr__(self, "base_channels", chans)
        if len(chans) != 3 or any(c <= 0 for c in chans):
            raise ConfigError(f"base_channels must be 3 positive ints, got {chans}")
        if not chans[0] < chans[1] < chans[2]:
            raise ConfigError(f"base_channels must be strictly increasing, got {chans}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")

    @property
    def feature_channels(self) -> int:
        return self.base_channels[-1]

    def to_dict(self) -> dict:
        return {
            "base_channels": list(self.base_channels),
            "kernel_size": self.kernel_size,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        return cls(
            base_channels=tuple(d["base_channels"]),
            kernel_size=int(d.get("kernel_size", 3)),
            in_channels=int(d.get("in_channels", 3)),
            out_channels=int(d.get("out_channels", 3)),
        )


class ResBlock(nn.Module):
    def __init__(self, channels: int, kernel_size: int):
        super().__init__()
        pad = (kernel_size - 1) // 2
        self.conv1 = nn.Conv2d(channels, channels, kernel_size, padding=pad)
        self.relu = nn.ReLU()
        self.conv2 = nn.Conv2d(channels, channels, kernel_size, padding=pad)

    def forward(self, x):
        return x + self.conv2(self.relu(self.conv1(x)))


class _Codec(nn.Module):
    role = ""

    def __init__(self, cfg: ChannelConfig, level: int = 1):
        super().__init__()
        self.cfg = cfg
        self.level = level

    @property
    def num_conv_layers(self) -> int:
        return sum(isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)) for m in self.modules())

    @property
    def num_skips(self) -> int:
        return sum(isinstance(m, ResBlock) for m in self.modules())

    @property
    def num_relus(self) -> int:
        return sum(isinstance(m, nn.ReLU) for m in self.modules())

    def extra_repr(self) -> str:
        return f"role={self.role}, level={self.level}"


class Encoder(_Codec):
    role = "encoder"

    def __init__(self, cfg: ChannelConfig, level: int = 1):
        super().__init__(cfg, level)
        k = cfg.kernel_size
        pad = (k - 1) // 2
        c1, c2, c3 = cfg.base_channels
        layers = []
        for cin, cout, stride in ((cfg.in_channels, c1, 1), (c1, c2, 2), (c2, c3, 2)):
            layers += [
                nn.Conv2d(cin, cout, k, stride=stride, padding=pad),
                ResBlock(cout, k),
                ResBlock(cout, k),
            ]
        self.layers = nn.Sequential(*layers)

    def forward(self, x):
        return self.layers(x)


class Decoder(_Codec):
    role = "decoder"

    def __init__(self, cfg: ChannelConfig, level: int = 1):
        super().__init__(cfg, level)
        k = cfg.kernel_size
        pad = (k - 1) // 2
        c1, c2, c3 = cfg.base_channels
        self.layers = nn.Sequential(
            ResBlock(c3, k),
            ResBlock(c3, k),
            nn.ConvTranspose2d(c3, c2, UPCONV_KERNEL, stride=2, padding=1),
            ResBlock(c2, k),
            ResBlock(c2, k),
            nn.ConvTranspose2d(c2, c1, UPCONV_KERNEL, stride=2, padding=1),
            ResBlock(c1, k),
            ResBlock(c1, k),
            nn.Conv2d(c1, cfg.out_channels, k, padding=pad),
        )

    def forward(self, x):
        return self.layers(x)


def _fan_in(m: nn.Module) -> int:
    w = m.weight
    if isinstance(m, nn.ConvTranspose2d):
        # each output pixel sees in_channels * (k / stride)^2 inputs
        return w.shape[0] * math.prod(w.shape[2:]) // math.prod(m.stride)
    return w.shape[1] * math.prod(w.shape[2:])


@torch.no_grad()
def init_params(block: nn.Module, seed: int):
    """Seeded fan-in scaled uniform weights, zero biases."""
    gen = torch.Generator().manual_seed(int(seed))
    for m in block.modules():
        if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
            bound = 1.0 / math.sqrt(_fan_in(m))
            w = torch.rand(m.weight.shape, generator=gen, dtype=torch.float64)
            m.weight.copy_((2.0 * w - 1.0) * bound)
            m.bias.zero_()
    return block


def build_encoder(cfg: ChannelConfig | None = None, seed: int = 0, level: int = 1) -> Encoder:
    cfg = cfg or ChannelConfig()
    return init_params(Encoder(cfg, level), seed)


def build_decoder(cfg: ChannelConfig | None = None, seed: int = 0, level: int = 1) -> Decoder:
    cfg = cfg or ChannelConfig()
    return init_params(Decoder(cfg, level), seed)


def _batched(x):
    if x.dim() == 3:
        return x.unsqueeze(0), True
    if x.dim() == 4:
        return x, False
    raise ShapeError(f"expected a C x H x W or N x C x H x W tensor, got {tuple(x.shape)}")


def encode(params: Encoder, x: torch.Tensor) -> torch.Tensor:
    """Apply an encoder; spatial size shrinks by 4 in each dimension."""
    if getattr(params, "role", None) != "encoder":
        raise ConfigError("encode() needs encoder parameters")
    xb, squeeze = _batched(x)
    for name, size in (("height", xb.shape[-2]), ("width", xb.shape[-1])):
        if size % ENCODER_STRIDE:
            raise ShapeError(f"input {name} {size} is not divisible by {ENCODER_STRIDE}")
    out = params(xb)
    return out[0] if squeeze else out


def decode(params: Decoder, f: torch.Tensor) -> torch.Tensor:
    """Apply a decoder; spatial size grows by 4, output is not clamped."""
    if getattr(params, "role", None) != "decoder":
        raise ConfigError("decode() needs decoder parameters")
    fb, squeeze = _batched(f)
    want = params.cfg.feature_channels
    if fb.shape[1] != want:
        raise ShapeError(f"feature map has {fb.shape[1]} channels, decoder expects {want}")
    out = params(fb)
    return out[0] if squeeze else out


def count_params(obj) -> int:
    """Number of scalar trainable parameters in a block or model (or an iterable of blocks)."""
    if obj is None:
        return 0
    if isinstance(obj, nn.Module):
        return sum(p.numel() for p in obj.parameters() if p.requires_grad)
    if isinstance(obj, torch.Tensor):
        return obj.numel()
    return sum(count_params(o) for o in obj)


def level_seeds(seed: int, n: int = 6) -> list[int]:
    """Independent per-block seeds derived from one model seed."""
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n)]


def build_level_blocks(cfg: ChannelConfig, seed: int) -> tuple[list[Encoder], list[Decoder]]:
    """Encoders and decoders for levels 1..3, each with its own derived seed."""
    seeds = level_seeds(seed)
    encoders = [build_encoder(cfg, seeds[2 * i], i + 1) for i in range(3)]
    decoders = [build_decoder(cfg, seeds[2 * i + 1], i + 1) for i in range(3)]
    return encoders, decoders
