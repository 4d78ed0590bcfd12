"""Model factory keyed by architecture name."""
from __future__ import annotations

import numpy as np
import torch

from .codec import ChannelConfig
from .dmphn import DmphnModel
from .dmshn import DmshnModel
from .errors import ConfigError

MODEL_KINDS = {"dmphn": DmphnModel, "dmshn": DmshnModel}


def build_model(kind: str = "dmphn", cfg: ChannelConfig | None = None, seed: int = 0):
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}; choose from {sorted(MODEL_KINDS)}") from None
    return cls.build(cfg, seed)


@torch.no_grad()
def dehaze(model, img: np.ndarray, device=None) -> np.ndarray:
    """Run ``model`` on one ``H x W x 3`` image and return the dehazed image at full size."""
    ref = next(model.parameters())
    x = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))
    out = model(x[None].to(device or ref.device, ref.dtype))[0]
    return out.cpu().numpy().transpose(1, 2, 0)
