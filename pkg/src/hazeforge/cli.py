"""Command-line entry point: ``hazeforge <subcommand> ...``.

Failures print one line ``hazeforge: error[<category>]: <message>`` to stderr
and exit with a category-specific code (see ``EXIT_CODES``).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import datapipe
from .codec import ChannelConfig
from .errors import (
    CheckpointError, CheckpointVersionError, ConfigError, HazeForgeError, PairingError,
    ShapeError, TrainingDiverged,
)
from .imageio import load_image, save_image
from .losses import LossWeights
from .metrics import benchmark_runtime, psnr, ssim
from .models import build_model, dehaze
from .scattering import HazeFieldParams
from .trainer import TrainConfig, default_device, load_checkpoint, save_checkpoint, train

log = logging.getLogger("hazeforge")

EXIT_CODES = {
    "usage": 2,
    "missing-file": 3,
    ShapeError.category: ShapeError.exit_code,
    ConfigError.category: ConfigError.exit_code,
    CheckpointError.category: CheckpointError.exit_code,
    CheckpointVersionError.category: CheckpointVersionError.exit_code,
    PairingError.category: PairingError.exit_code,
    TrainingDiverged.category: TrainingDiverged.exit_code,
    "error": 1,
}

RESULT_FIELDS = ("name", "psnr_db", "ssim", "runtime_s")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"sizes must be positive, got {text!r}")
    return h, w


def _channels(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(","))


# --- config files ---------------------------------------------------------------

_FLOAT_KEYS = {"beta1", "beta2", "eps", "lr_initial", "lr_final", "early_stop_rel"}
_INT_KEYS = {"batch_size", "max_epochs", "seed", "early_stop_patience"}
_WEIGHT_KEYS = {"lambda_r", "lambda_p", "lambda_tv", "lambda_1", "lambda_2"}


def read_train_config(path) -> dict:
    """Parse a ``[train]`` key = value file into TrainConfig keyword arguments."""
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(f"config file {path} not found")
    if "train" not in parser:
        raise ConfigError(f"{path}: missing [train] section")
    out: dict = {}
    weights = {}
    extractor = {}
    for key, value in parser["train"].items():
        try:
            if key in _FLOAT_KEYS:
                out[key] = float(value)
            elif key in _INT_KEYS:
                out[key] = int(value)
            elif key in _WEIGHT_KEYS:
                weights[key] = float(value)
            elif key in ("model_kind", "lr_schedule"):
                out[key] = value.strip()
            elif key == "store_optimizer":
                out[key] = parser["train"].getboolean(key)
            elif key == "base_channels":
                out["channels"] = ChannelConfig(_channels(value))
            elif key == "extractor_seed":
                extractor["seed"] = int(value)
            elif key == "extractor_stages":
                extractor["stages"] = list(_channels(value))
            else:
                raise ConfigError(f"{path}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}: bad value for {key}: {value!r}") from exc
    if weights:
        out["weights"] = LossWeights(**weights)
    if extractor:
        out["extractor"] = {"name": "random_conv", "seed": 0, "stages": [16, 32, 64], **extractor}
    return out


# --- subcommands ----------------------------------------------------------------


def cmd_synth(args) -> int:
    h, w = args.size
    sigma = (args.sigma_min or min(h, w) / 8, args.sigma_max or min(h, w) / 2)
    haze = HazeFieldParams(seed=args.seed, num_blobs=args.blobs, blob_sigma_range=sigma,
                           t_range=(args.t_min, args.t_max))
    ds = datapipe.make_synthetic_dataset(args.n, h, w, seed=args.seed, haze=haze,
                                         A_range=(args.a_min, args.a_max))
    datapipe.write_dataset(ds, args.out)
    print(f"wrote {len(ds)} pairs of {h}x{w} to {args.out}")
    return 0


def cmd_prepare(args) -> int:
    rows, cols = args.grid
    ds = datapipe.load_pairs(args.root, args.naming)
    patches = datapipe.patchify_dataset(ds, rows, cols)
    datapipe.write_dataset(patches, args.out)
    shape = patches[0].shape if len(patches) else (0, 0)
    print(f"wrote {len(patches)} patch pairs of {shape[0]}x{shape[1]} to {args.out}")
    return 0


def cmd_train(args) -> int:
    kw = read_train_config(args.config) if args.config else {}
    if args.model:
        kw["model_kind"] = args.model
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.epochs is not None:
        kw["max_epochs"] = args.epochs
    if args.lr is not None:
        kw["lr_initial"] = args.lr
        kw["lr_final"] = args.lr / 2
    if args.batch_size is not None:
        kw["batch_size"] = args.batch_size
    if args.channels:
        kw["channels"] = ChannelConfig(args.channels)
    cfg = TrainConfig(**kw)
    ds = datapipe.load_pairs(args.data, args.naming)
    ckpt = train(cfg, ds, log_path=args.log)
    size = save_checkpoint(ckpt, args.out_ckpt)
    final = ckpt.loss_history[-1] if ckpt.loss_history else float("nan")
    print(f"trained {cfg.model_kind} for {ckpt.epoch} epochs ({ckpt.global_step} steps), "
          f"final loss {final:.6f}; checkpoint {args.out_ckpt} ({size} bytes)")
    return 0


def _load_model(path):
    device = default_device()
    return load_checkpoint(path).build_model(device).eval(), device


def cmd_infer(args) -> int:
    model, device = _load_model(args.ckpt)
    src = Path(args.inp)
    if src.is_dir():
        jobs = [(p, Path(args.out) / p.name) for p in sorted(src.glob("*.png"))]
    elif src.exists():
        out = Path(args.out)
        jobs = [(src, out / src.name if out.is_dir() else out)]
    else:
        raise FileNotFoundError(f"input {src} does not exist")
    for inp, out in jobs:
        img = load_image(inp)
        save_image(out, dehaze(model, img, device))
        print(f"{inp} -> {out} ({img.shape[0]}x{img.shape[1]})")
    return 0


def evaluate_pairs(model, ds, device, quantized: bool = False, save_dir=None) -> list[dict]:
    rows = []
    for pair in ds:
        hazy, clear = pair.load()
        t0 = time.perf_counter()
        pred = dehaze(model, hazy, device)
        runtime = time.perf_counter() - t0
        if save_dir:
            save_image(Path(save_dir) / f"{pair.name}.png", pred)
        rows.append({
            "name": pair.name,
            "psnr_db": psnr(pred, clear, quantized=quantized),
            "ssim": ssim(pred, clear, quantized=quantized),
            "runtime_s": runtime,
        })
    return rows


def mean_row(rows: list[dict]) -> dict:
    return {
        "name": "mean",
        **{k: float(np.mean([r[k] for r in rows])) if rows else float("nan")
           for k in RESULT_FIELDS[1:]},
    }


def format_table(rows: list[dict]) -> str:
    lines = [f"{'image':<24} {'PSNR':>8} {'SSIM':>8} {'Runtime(s)':>11}"]
    for r in rows:
        lines.append(f"{r['name']:<24} {r['psnr_db']:>8.2f} {r['ssim']:>8.4f} {r['runtime_s']:>11.4f}")
    return "\n".join(lines)


def write_results(rows: list[dict], path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=RESULT_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def cmd_eval(args) -> int:
    model, device = _load_model(args.ckpt)
    ds = datapipe.load_pairs(args.data, args.naming, split="val")
    rows = evaluate_pairs(model, ds, device, args.quantized, args.save_dir)
    rows.append(mean_row(rows))
    print(format_table(rows))
    if args.results:
        write_results(rows, args.results)
    return 0


def cmd_bench(args) -> int:
    device = default_device()
    if args.ckpt:
        model = load_checkpoint(args.ckpt).build_model(device).eval()
    else:
        model = build_model(args.model, ChannelConfig(args.channels) if args.channels else None).to(device).eval()
    h, w = args.size
    report = benchmark_runtime(model, h, w, warmup=args.warmup, reps=args.reps, device=device)
    report["model_kind"] = model.kind
    print(f"{model.kind} {h}x{w}: mean {report['mean_s']:.4f} s, std {report['std_s']:.4f} s "
          f"over {args.reps} reps on {report['hardware']['device']}")
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return 0


def cmd_gallery(args) -> int:
    model, device = _load_model(args.ckpt)
    ds = datapipe.load_pairs(args.data, args.naming, split="val")
    out = Path(args.out)
    pairs = list(ds)[: args.limit] if args.limit else list(ds)
    for pair in pairs:
        hazy, clear = pair.load()
        pred = dehaze(model, hazy, device)
        gap = np.ones((hazy.shape[0], args.gap, 3), dtype=np.float32)
        strip = np.concatenate([hazy, gap, pred, gap, clear], axis=1)
        save_image(out / f"{pair.name}_strip.png", strip)
    print(f"wrote {len(pairs)} strips (hazy | dehazed | ground truth) to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hazeforge", description="Multi-patch / multi-scale hierarchical dehazing toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic hazy/clear dataset")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--size", type=_size, default=(64, 64), metavar="HxW")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--t-min", type=float, default=0.3)
    s.add_argument("--t-max", type=float, default=0.9)
    s.add_argument("--a-min", type=float, default=0.7)
    s.add_argument("--a-max", type=float, default=1.0)
    s.add_argument("--blobs", type=int, default=4)
    s.add_argument("--sigma-min", type=float, default=None)
    s.add_argument("--sigma-max", type=float, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("prepare", help="cut a paired dataset into non-overlapping patches")
    s.add_argument("--root", required=True)
    s.add_argument("--grid", type=_size, default=(10, 10), metavar="RxC")
    s.add_argument("--naming", default="auto", choices=sorted(datapipe.NAMING_CONVENTIONS))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("train", help="train a model")
    s.add_argument("--model", choices=["dmphn", "dmshn"], default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--config", default=None, help="key = value file with a [train] section")
    s.add_argument("--out-ckpt", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--epochs", type=int, default=None)
    s.add_argument("--lr", type=float, default=None, help="initial learning rate; final is half of it")
    s.add_argument("--batch-size", type=int, default=None)
    s.add_argument("--channels", type=_channels, default=None, metavar="C1,C2,C3")
    s.add_argument("--naming", default="auto", choices=sorted(datapipe.NAMING_CONVENTIONS))
    s.add_argument("--log", default=None, help="append-only JSON-lines training log")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="dehaze an image or a directory of PNGs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="PSNR/SSIM over a paired dataset")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--naming", default="auto", choices=sorted(datapipe.NAMING_CONVENTIONS))
    s.add_argument("--results", default=None, help="CSV file for per-image rows plus a mean row")
    s.add_argument("--quantized", action="store_true", help="score 8-bit quantized images")
    s.add_argument("--save-dir", default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time forward passes")
    s.add_argument("--ckpt", default=None)
    s.add_argument("--model", choices=["dmphn", "dmshn"], default="dmphn")
    s.add_argument("--channels", type=_channels, default=None, metavar="C1,C2,C3")
    s.add_argument("--size", type=_size, default=(1200, 1600), metavar="HxW")
    s.add_argument("--reps", type=int, default=10)
    s.add_argument("--warmup", type=int, default=2)
    s.add_argument("--out", default=None, help="JSON report path")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("gallery", help="side-by-side hazy | dehazed | ground-truth strips")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--naming", default="auto", choices=sorted(datapipe.NAMING_CONVENTIONS))
    s.add_argument("--out", required=True)
    s.add_argument("--limit", type=int, default=0)
    s.add_argument("--gap", type=int, default=4)
    s.set_defaults(func=cmd_gallery)
    return p


def _fail(category: str, message: str) -> int:
    first = str(message).strip().splitlines()[0] if str(message).strip() else category
    print(f"hazeforge: error[{category}]: {first}", file=sys.stderr)
    return EXIT_CODES[category]


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HazeForgeError as exc:
        return _fail(exc.category, str(exc))
    except FileNotFoundError as exc:
        return _fail("missing-file", str(exc))
    except (ValueError, OSError) as exc:
        return _fail("error", str(exc))


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
