"""DMPHN (1-2-4): bottom-up residual flow over a 1/2/4 patch hierarchy.

Level 2 cuts the image into left/right halves; level 3 cuts each half into
top/bottom, giving patches ordered (left-top, left-bottom, right-top,
right-bottom).  Level-3 features of the same half are re-joined along height
so they line up with the level-2 encoder output of that half; level-2
features are re-joined along width.
"""
from __future__ import annotations

from typing import NamedTuple

import torch

from .hierarchy import HierarchicalModel, add_aligned, check_divisible
from .tiling import HEIGHT, WIDTH, concat_spatial, split_horizontal, split_vertical

# two patch halvings times the encoder's stride of 4
DMPHN_DIVISOR = 8


class LevelOutputs(NamedTuple):
    q3: tuple[torch.Tensor, torch.Tensor]
    q2: torch.Tensor
    out: torch.Tensor


class DmphnModel(HierarchicalModel):
    kind = "dmphn"
    divisor = DMPHN_DIVISOR

    def forward(self, hazy):
        return dmphn_forward(self, hazy)


def level_outputs(model, hazy: torch.Tensor) -> LevelOutputs:
    """Run the full DMPHN traversal and keep the intermediate residual images.

    ``model`` only needs ``enc1..enc3`` / ``dec1..dec3`` callables, which lets
    tests plug in stub networks.
    """
    check_divisible(hazy, DMPHN_DIVISOR, "dmphn")

    # level 3: four patches, encoded independently
    halves = split_vertical(hazy)
    patches = [p for half in halves for p in split_horizontal(half)]
    f3 = [model.enc3(p) for p in patches]
    p3 = [concat_spatial(f3[2 * j], f3[2 * j + 1], HEIGHT) for j in range(2)]
    q3 = [model.dec3(p) for p in p3]

    # level 2: two halves, corrected by the level-3 residuals
    f2 = [model.enc2(add_aligned(halves[j], q3[j], "level-2 input")) for j in range(2)]
    f2_star = [add_aligned(f2[j], p3[j], "level-2 features") for j in range(2)]
    p2 = concat_spatial(f2_star[0], f2_star[1], WIDTH)
    q2 = model.dec2(p2)

    # level 1: whole image
    f1 = model.enc1(add_aligned(hazy, q2, "level-1 input"))
    p1 = add_aligned(f1, p2, "level-1 features")
    out = model.dec1(p1).clamp(0.0, 1.0)
    return LevelOutputs((q3[0], q3[1]), q2, out)


def dmphn_forward(model, hazy: torch.Tensor) -> torch.Tensor:
    """Dehaze ``hazy`` (``3 x H x W`` or ``N x 3 x H x W``, H and W divisible by 8)."""
    return level_outputs(model, hazy).out
