"""Hierarchical multi-patch / multi-scale networks for nonhomogeneous haze removal."""
from .codec import ChannelConfig, build_decoder, build_encoder, count_params, decode, encode
from .dmphn import DmphnModel, dmphn_forward, level_outputs
from .dmshn import DmshnModel, dmshn_forward
from .losses import LossWeights, perceptual_loss, reconstruction_loss, total_loss, tv_loss
from .metrics import benchmark_runtime, psnr, ssim
from .models import build_model, dehaze
from .scattering import HazeFieldParams, generate_transmission, invert_haze, synthesize_haze

__version__ = "0.1.0"
