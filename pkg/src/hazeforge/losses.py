"""Training objective: a pixel reconstruction term plus perceptual and smoothness penalties."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    lambda_r: float = 1.0
    lambda_p: float = 6e-3
    lambda_tv: float = 2e-8
    lambda_1: float = 0.6
    lambda_2: float = 0.4

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and non-negative, got {value}")


def _same_shape(pred, gt):
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {tuple(pred.shape)} and target {tuple(gt.shape)} differ")


# --- feature extractors -------------------------------------------------------


class IdentityExtractor(nn.Module):
    """phi(x) = x; reduces the perceptual term to plain MSE."""

    def descriptor(self) -> dict:
        return {"name": "identity"}

    def forward(self, x):
        return x


class RandomConvExtractor(nn.Module):
    """Fixed, seeded stack of stride-2 3x3 convolutions with ReLUs.

    Weights are drawn uniformly in +-1/sqrt(fan_in), so the map is Lipschitz
    with a bounded constant; they are frozen and never trained.
    """

    def __init__(self, stages=(16, 32, 64), seed: int = 0, in_channels: int = 3):
        super().__init__()
        self.stages = tuple(int(s) for s in stages)
        self.seed = int(seed)
        gen = torch.Generator().manual_seed(self.seed)
        layers = []
        cin = in_channels
        for cout in self.stages:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            bound = 1.0 / math.sqrt(cin * 9)
            with torch.no_grad():
                w = torch.rand(conv.weight.shape, generator=gen, dtype=torch.float64)
                conv.weight.copy_((2 * w - 1) * bound)
                conv.bias.zero_()
            layers += [conv, nn.ReLU()]
            cin = cout
        self.net = nn.Sequential(*layers)
        self.requires_grad_(False)

    def descriptor(self) -> dict:
        return {"name": "random_conv", "seed": self.seed, "stages": list(self.stages)}

    def forward(self, x):
        return self.net(x)


class VGGConv43Extractor(nn.Module):
    """VGG-16 features up to relu4_3, using externally supplied weights.

    ``weights_path`` must hold a torchvision ``vgg16`` state dict; nothing is
    downloaded.  Inputs in ``[0, 1]`` are ImageNet-normalized first.
    """

    def __init__(self, weights_path: str):
        super().__init__()
        from torchvision.models import vgg16

        vgg = vgg16(weights=None)
        vgg.load_state_dict(torch.load(weights_path, map_location="cpu"))
        self.weights_path = str(weights_path)
        self.net = vgg.features[:23]
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))
        self.requires_grad_(False)

    def descriptor(self) -> dict:
        return {"name": "vgg16_conv4_3", "weights": self.weights_path}

    def forward(self, x):
        return self.net((x - self.mean) / self.std)


def default_extractor() -> RandomConvExtractor:
    return RandomConvExtractor()


def make_extractor(descriptor: dict | None) -> nn.Module:
    """Rebuild an extractor from the descriptor stored in a checkpoint."""
    if not descriptor:
        return default_extractor()
    name = descriptor.get("name")
    if name == "identity":
        return IdentityExtractor()
    if name == "random_conv":
        return RandomConvExtractor(descriptor.get("stages", (16, 32, 64)), descriptor.get("seed", 0))
    if name == "vgg16_conv4_3":
        return VGGConv43Extractor(descriptor["weights"])
    raise ConfigError(f"unknown feature extractor {name!r}")


# --- loss terms ---------------------------------------------------------------


def reconstruction_loss(pred, gt, w: LossWeights = LossWeights()) -> torch.Tensor:
    """lambda_1 * mean |pred - gt| + lambda_2 * mean (pred - gt)^2."""
    _same_shape(pred, gt)
    diff = pred - gt
    return w.lambda_1 * diff.abs().mean() + w.lambda_2 * diff.pow(2).mean()


def perceptual_loss(pred, gt, phi: nn.Module) -> torch.Tensor:
    """Mean squared distance between extracted features."""
    _same_shape(pred, gt)
    return F.mse_loss(phi(pred), phi(gt))


def tv_loss(pred) -> torch.Tensor:
    """Euclidean norm of the x forward differences plus that of the y differences."""
    if pred.shape[-1] < 2 or pred.shape[-2] < 2:
        raise ShapeError(f"tv_loss needs at least 2x2 pixels, got {tuple(pred.shape[-2:])}")
    dx = pred[..., :, 1:] - pred[..., :, :-1]
    dy = pred[..., 1:, :] - pred[..., :-1, :]
    return torch.linalg.vector_norm(dx) + torch.linalg.vector_norm(dy)


def loss_components(pred, gt, w: LossWeights, phi: nn.Module) -> dict[str, torch.Tensor]:
    return {
        "reconstruction": reconstruction_loss(pred, gt, w),
        "perceptual": perceptual_loss(pred, gt, phi),
        "tv": tv_loss(pred),
    }


def combine(parts: dict[str, torch.Tensor], w: LossWeights) -> torch.Tensor:
    return w.lambda_r * parts["reconstruction"] + w.lambda_p * parts["perceptual"] + w.lambda_tv * parts["tv"]


def total_loss(pred, gt, w: LossWeights = LossWeights(), phi: nn.Module | None = None) -> torch.Tensor:
    phi = phi if phi is not None else default_extractor().to(pred.dtype)
    return combine(loss_components(pred, gt, w, phi), w)
