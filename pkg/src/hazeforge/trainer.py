"""Adam training loop with its learning-rate schedule, plus the binary checkpoint format.

Checkpoint layout (all integers little-endian)::

    b"HZFG" | u16 version | u32 header length | UTF-8 JSON header | payload

The payload is every model parameter as float32, in ``state_dict`` order of
the architecture named in the header, optionally followed by Adam's first and
then second moment buffers in the same order.
"""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .codec import ChannelConfig, count_params
from .datapipe import PairedDataset, iterate_batches
from .errors import CheckpointError, CheckpointVersionError, ConfigError, ShapeError, TrainingDiverged
from .losses import LossWeights, combine, loss_components, make_extractor
from .models import MODEL_KINDS, build_model

log = logging.getLogger(__name__)

MAGIC = b"HZFG"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<4sHI")
LR_SCHEDULES = ("step", "linear")
DEFAULT_EXTRACTOR = {"name": "random_conv", "seed": 0, "stages": [16, 32, 64]}


def default_device() -> torch.device:
    return torch.device(os.environ.get("HAZEFORGE_DEVICE", "cpu"))


@dataclass(frozen=True)
class TrainConfig:
    model_kind: str = "dmphn"
    batch_size: int = 8
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8
    lr_initial: float = 1e-4
    lr_final: float = 5e-5
    lr_schedule: str = "step"
    max_epochs: int = 100
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    channels: ChannelConfig = field(default_factory=ChannelConfig)
    extractor: dict = field(default_factory=lambda: dict(DEFAULT_EXTRACTOR))
    # stop once the epoch loss improves by less than this fraction ...
    early_stop_rel: float = 1e-3
    # ... for this many consecutive epochs (0 disables early stopping)
    early_stop_patience: int = 10
    store_optimizer: bool = True

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model_kind!r}")
        if not 0 < self.lr_final <= self.lr_initial:
            raise ConfigError("learning rates must satisfy 0 < lr_final <= lr_initial")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam betas must lie in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"lr_schedule must be one of {LR_SCHEDULES}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["channels"] = self.channels.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        if "channels" in d and isinstance(d["channels"], dict):
            d["channels"] = ChannelConfig.from_dict(d["channels"])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)


def learning_rate(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Learning rate for a 0-based ``step`` out of ``total_steps`` planned steps.

    ``step``: ``lr_initial`` for the first half, ``lr_final`` afterwards.
    ``linear``: straight line between the two, reaching ``lr_final`` on the last step.
    """
    if total_steps <= 1:
        return cfg.lr_initial
    step = min(max(step, 0), total_steps - 1)
    if cfg.lr_schedule == "step":
        return cfg.lr_initial if step < total_steps / 2 else cfg.lr_final
    frac = step / (total_steps - 1)
    return cfg.lr_initial + (cfg.lr_final - cfg.lr_initial) * frac


# --- checkpoints -----------------------------------------------------------------


@dataclass
class Checkpoint:
    model_kind: str
    channels: ChannelConfig
    params: dict[str, np.ndarray]
    extractor: dict = field(default_factory=lambda: dict(DEFAULT_EXTRACTOR))
    optimizer: dict | None = None  # {"step": int, "exp_avg": {...}, "exp_avg_sq": {...}}
    epoch: int = 0
    global_step: int = 0
    seed: int = 0
    loss_history: list[float] = field(default_factory=list)
    hyperparameters: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model, extractor: dict | None = None, **kw) -> "Checkpoint":
        params = {k: v.detach().cpu().to(torch.float32).numpy().copy()
                  for k, v in model.state_dict().items()}
        return cls(model.kind, model.cfg, params, dict(extractor or DEFAULT_EXTRACTOR), **kw)

    def build_model(self, device=None):
        model = build_model(self.model_kind, self.channels)
        state = {k: torch.from_numpy(v.copy()) for k, v in self.params.items()}
        model.load_state_dict(state)
        return model.to(device) if device is not None else model

    @property
    def param_count(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _layout(kind: str, channels: ChannelConfig) -> list[tuple[str, tuple[int, ...]]]:
    model = build_model(kind, channels)
    return [(k, tuple(v.shape)) for k, v in model.state_dict().items()]


def save_checkpoint(ckpt: Checkpoint, path) -> int:
    """Write ``ckpt``; returns the number of bytes written."""
    layout = _layout(ckpt.model_kind, ckpt.channels)
    missing = [k for k, _ in layout if k not in ckpt.params]
    if missing:
        raise CheckpointError(f"checkpoint lacks parameters: {missing[:3]}...")
    header = {
        "architecture": {
            "kind": ckpt.model_kind,
            "channels": ckpt.channels.to_dict(),
            "extractor": ckpt.extractor,
        },
        "param_count": sum(math.prod(s) for _, s in layout),
        "dtype": "float32-le",
        "optimizer": None if ckpt.optimizer is None else {"step": int(ckpt.optimizer["step"])},
        "epoch": ckpt.epoch,
        "global_step": ckpt.global_step,
        "seed": ckpt.seed,
        "loss_history": ckpt.loss_history,
        "hyperparameters": ckpt.hyperparameters,
    }
    head = json.dumps(header, separators=(",", ":"), sort_keys=True).encode("utf-8")

    chunks = [ckpt.params]
    if ckpt.optimizer is not None:
        chunks += [ckpt.optimizer["exp_avg"], ckpt.optimizer["exp_avg_sq"]]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREAMBLE.pack(MAGIC, ckpt.version, len(head)))
        fh.write(head)
        for chunk in chunks:
            for name, shape in layout:
                arr = np.asarray(chunk[name], dtype="<f4")
                if arr.shape != shape:
                    raise CheckpointError(f"{name}: shape {arr.shape} does not match {shape}")
                fh.write(arr.tobytes(order="C"))
    return path.stat().st_size


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise CheckpointError(f"{path}: file too short to be a checkpoint")
    magic, version, head_len = _PREAMBLE.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    start = _PREAMBLE.size + head_len
    if start > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_PREAMBLE.size:start].decode("utf-8"))
        arch = header["architecture"]
        kind = arch["kind"]
        channels = ChannelConfig.from_dict(arch["channels"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc

    layout = _layout(kind, channels)
    n_params = sum(math.prod(s) for _, s in layout)
    if header.get("param_count") != n_params:
        raise CheckpointError(f"{path}: header claims {header.get('param_count')} parameters, "
                              f"architecture has {n_params}")
    n_chunks = 1 if header.get("optimizer") is None else 3
    expected = n_chunks * n_params * 4
    payload = raw[start:]
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, expected {expected}")

    flat = np.frombuffer(payload, dtype="<f4")
    chunks = []
    offset = 0
    for _ in range(n_chunks):
        chunk = {}
        for name, shape in layout:
            n = math.prod(shape)
            chunk[name] = flat[offset:offset + n].reshape(shape).astype(np.float32)
            offset += n
        chunks.append(chunk)
    optimizer = None
    if n_chunks == 3:
        optimizer = {"step": header["optimizer"]["step"], "exp_avg": chunks[1], "exp_avg_sq": chunks[2]}
    return Checkpoint(
        model_kind=kind,
        channels=channels,
        params=chunks[0],
        extractor=arch.get("extractor") or dict(DEFAULT_EXTRACTOR),
        optimizer=optimizer,
        epoch=header.get("epoch", 0),
        global_step=header.get("global_step", 0),
        seed=header.get("seed", 0),
        loss_history=header.get("loss_history", []),
        hyperparameters=header.get("hyperparameters", {}),
        version=version,
    )


def _optimizer_state(model, opt: torch.optim.Adam, step: int) -> dict:
    names = {id(p): k for k, p in model.named_parameters()}
    exp_avg, exp_avg_sq = {}, {}
    for p in model.parameters():
        st = opt.state.get(p, {})
        zeros = torch.zeros_like(p)
        exp_avg[names[id(p)]] = st.get("exp_avg", zeros).detach().cpu().float().numpy().copy()
        exp_avg_sq[names[id(p)]] = st.get("exp_avg_sq", zeros).detach().cpu().float().numpy().copy()
    return {"step": step, "exp_avg": exp_avg, "exp_avg_sq": exp_avg_sq}


# --- training ---------------------------------------------------------------------


class TrainLog:
    """Append-only JSON-lines training log; a no-op without a path."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def write(self, **record):
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _check_dataset(ds: PairedDataset, divisor: int):
    if len(ds) == 0:
        raise ConfigError("training needs a non-empty dataset")
    shapes = {p.shape for p in ds}
    if len(shapes) != 1:
        raise ShapeError(f"training images must share one size, found {sorted(shapes)}")
    h, w = shapes.pop()
    if h % divisor or w % divisor:
        raise ShapeError(f"training images {h}x{w} are not divisible by {divisor}")


@torch.no_grad()
def evaluate_loss(model, ds: PairedDataset, cfg: TrainConfig, device=None) -> float:
    """Mean per-batch total loss over ``ds`` in fixed order."""
    device = device or next(model.parameters()).device
    phi = make_extractor(cfg.extractor).to(device)
    losses = []
    for _, hazy, clear in iterate_batches(ds, cfg.batch_size, shuffle=False):
        pred = model(hazy.to(device))
        losses.append(float(combine(loss_components(pred, clear.to(device), cfg.weights, phi), cfg.weights)))
    return float(np.mean(losses))


def make_optimizer(params, cfg: TrainConfig) -> torch.optim.Adam:
    """Adam with the configured betas and epsilon, no weight decay."""
    return torch.optim.Adam(params, lr=cfg.lr_initial, betas=(cfg.beta1, cfg.beta2),
                            eps=cfg.eps, weight_decay=0.0)


def train(cfg: TrainConfig, ds: PairedDataset, log_path=None, device=None, model=None) -> Checkpoint:
    """Optimize a freshly initialized (or given) model on ``ds`` and return its checkpoint."""
    device = torch.device(device) if device is not None else default_device()
    model = model if model is not None else build_model(cfg.model_kind, cfg.channels, cfg.seed)
    model = model.to(device)
    _check_dataset(ds, model.divisor)
    phi = make_extractor(cfg.extractor).to(device)
    opt = make_optimizer(model.parameters(), cfg)
    steps_per_epoch = math.ceil(len(ds) / cfg.batch_size)
    total_steps = steps_per_epoch * cfg.max_epochs
    train_log = TrainLog(log_path)

    step = 0
    history: list[float] = []
    stale = 0
    epoch = 0
    for epoch in range(cfg.max_epochs):
        model.train()
        epoch_losses = []
        for batch_ids, hazy, clear in iterate_batches(ds, cfg.batch_size, cfg.seed, epoch):
            lr = learning_rate(step, total_steps, cfg)
            for group in opt.param_groups:
                group["lr"] = lr
            pred = model(hazy.to(device))
            parts = loss_components(pred, clear.to(device), cfg.weights, phi)
            loss = combine(parts, cfg.weights)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss.item()} at step {step} (epoch {epoch}, batch {batch_ids})",
                    step=step, batch_ids=batch_ids,
                )
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            epoch_losses.append(loss.item())
            train_log.write(step=step, epoch=epoch, lr=lr, loss=loss.item(),
                            **{k: v.item() for k, v in parts.items()})
            step += 1

        mean_loss = float(np.mean(epoch_losses))
        log.info("epoch %d: mean loss %.6f", epoch, mean_loss)
        if history and history[-1] - mean_loss < cfg.early_stop_rel * abs(history[-1]):
            stale += 1
        else:
            stale = 0
        history.append(mean_loss)
        if cfg.early_stop_patience and stale >= cfg.early_stop_patience:
            log.info("early stop after epoch %d", epoch)
            break

    return Checkpoint.from_model(
        model,
        extractor=cfg.extractor,
        optimizer=_optimizer_state(model, opt, step) if cfg.store_optimizer and step else None,
        epoch=len(history),
        global_step=step,
        seed=cfg.seed,
        loss_history=history,
        hyperparameters=cfg.to_dict(),
    )


__all__ = [
    "Checkpoint", "TrainConfig", "learning_rate", "make_optimizer", "train", "evaluate_loss",
    "save_checkpoint", "load_checkpoint", "count_params", "default_device",
]
