"""DMSHN: coarse-to-fine residual flow over a x1 / x0.5 / x0.25 image pyramid."""
from __future__ import annotations

import torch

from .hierarchy import HierarchicalModel, add_aligned, check_divisible
from .tiling import downsample2, upsample2

# two pyramid halvings times the encoder's stride of 4
DMSHN_DIVISOR = 16


class DmshnModel(HierarchicalModel):
    kind = "dmshn"
    divisor = DMSHN_DIVISOR

    def forward(self, hazy):
        return dmshn_forward(self, hazy)


def dmshn_forward(model, hazy: torch.Tensor) -> torch.Tensor:
    """Dehaze ``hazy`` (H and W divisible by 16); output is clamped to [0, 1].

    The level-1 encoder is ``enc1``.
    """
    check_divisible(hazy, DMSHN_DIVISOR, "dmshn")
    half = downsample2(hazy)
    quarter = downsample2(half)

    f3 = model.enc3(quarter)
    p3 = model.dec3(f3)

    f2_star = model.enc2(add_aligned(half, upsample2(p3), "level-2 input"))
    f2 = add_aligned(f2_star, upsample2(f3), "level-2 features")
    p2 = model.dec2(f2)

    f1_star = model.enc1(add_aligned(hazy, upsample2(p2), "level-1 input"))
    f1 = add_aligned(f1_star, upsample2(f2), "level-1 features")
    return model.dec1(f1).clamp(0.0, 1.0)
