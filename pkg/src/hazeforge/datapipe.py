"""Paired hazy/clear datasets on disk and in memory, with patch cutting and synthetic data.

On disk a dataset lives under ``<root>/hazy/*.png`` and ``<root>/GT/*.png``
with files matched by stem (an ``NN_hazy`` / ``NN_GT`` suffix pair is also
understood).  In memory, a :class:`PairedDataset` is an immutable list of
:class:`ImagePair` records whose pixels are either arrays or paths loaded on
demand, optionally restricted to a crop box.

No augmentation happens anywhere: every sample is an exact crop of its source.
"""
from __future__ import annotations

import dataclasses
import functools
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import PairingError, ShapeError
from .imageio import load_image, load_image_shape, save_image, save_transmission
from .scattering import HazeFieldParams, generate_transmission, synthesize_haze

HAZY_DIR = "hazy"
GT_DIR = "GT"
TRANS_DIR = "trans"
MANIFEST = "manifest.json"

# every transformation a sample goes through between disk and a training batch
PIPELINE_STAGES = ("load", "crop", "to_tensor", "stack")

NAMING_CONVENTIONS = {
    "stem": (re.compile(r"^(?P<key>.+)$"), re.compile(r"^(?P<key>.+)$")),
    "nh-haze": (re.compile(r"^(?P<key>.+)_hazy$", re.I), re.compile(r"^(?P<key>.+)_GT$", re.I)),
    "auto": (
        re.compile(r"^(?P<key>.+?)(?:_hazy)?$", re.I),
        re.compile(r"^(?P<key>.+?)(?:_GT|_clear)?$", re.I),
    ),
}


@functools.lru_cache(maxsize=4)
def _read_cached(path: str) -> np.ndarray:
    img = load_image(path)
    img.flags.writeable = False
    return img


@dataclass(frozen=True, eq=False)
class ImagePair:
    """One hazy/clear pair; ``box`` is ``(top, left, height, width)`` or None for the full image."""

    name: str
    hazy: Path | np.ndarray
    clear: Path | np.ndarray
    box: tuple[int, int, int, int] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def source_shape(self) -> tuple[int, int]:
        if isinstance(self.hazy, np.ndarray):
            return self.hazy.shape[:2]
        return load_image_shape(self.hazy)

    @property
    def shape(self) -> tuple[int, int]:
        if self.box is not None:
            return self.box[2], self.box[3]
        return self.source_shape

    def _pixels(self, src) -> np.ndarray:
        img = src if isinstance(src, np.ndarray) else _read_cached(str(src))
        if self.box is not None:
            top, left, h, w = self.box
            img = img[top:top + h, left:left + w]
        return np.array(img, dtype=np.float32)

    def load(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(hazy, clear)`` as ``H x W x 3`` float32 arrays."""
        return self._pixels(self.hazy), self._pixels(self.clear)


@dataclass(frozen=True)
class PairedDataset:
    pairs: tuple[ImagePair, ...] = ()
    grid: tuple[int, int] = (1, 1)
    split: str = "train"

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i) -> ImagePair:
        return self.pairs[i]

    def __iter__(self):
        return iter(self.pairs)


# --- on-disk datasets ----------------------------------------------------------


def _index_dir(folder: Path, pattern: re.Pattern) -> dict[str, Path]:
    out = {}
    if not folder.is_dir():
        return out
    for p in sorted(folder.glob("*.png")):
        m = pattern.match(p.stem)
        key = m.group("key") if m else p.stem
        out[key] = p
    return out


def load_pairs(root, naming_convention: str = "auto", split: str = "train") -> PairedDataset:
    """Match ``hazy/`` and ``GT/`` images by shared stem, in lexical order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    try:
        hazy_pat, gt_pat = NAMING_CONVENTIONS[naming_convention]
    except KeyError:
        raise ValueError(f"unknown naming convention {naming_convention!r}") from None
    hazy = _index_dir(root / HAZY_DIR, hazy_pat)
    gt = _index_dir(root / GT_DIR, gt_pat)

    orphans = sorted(str(hazy[k]) for k in hazy.keys() - gt.keys())
    orphans += sorted(str(gt[k]) for k in gt.keys() - hazy.keys())
    if orphans:
        raise PairingError("unpaired files: " + ", ".join(orphans))

    pairs = []
    for key in sorted(hazy):
        hs, gs = load_image_shape(hazy[key]), load_image_shape(gt[key])
        if hs != gs:
            raise ShapeError(f"pair {key}: hazy is {hs[0]}x{hs[1]} but GT is {gs[0]}x{gs[1]}")
        pairs.append(ImagePair(key, hazy[key], gt[key]))
    return PairedDataset(tuple(pairs), split=split)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_dataset(ds: PairedDataset, root) -> Path:
    """Materialize ``ds`` as PNGs under ``root`` plus a JSON manifest with checksums."""
    root = Path(root)
    (root / HAZY_DIR).mkdir(parents=True, exist_ok=True)
    (root / GT_DIR).mkdir(parents=True, exist_ok=True)
    entries = []
    for pair in ds:
        hazy, clear = pair.load()
        hp, gp = root / HAZY_DIR / f"{pair.name}.png", root / GT_DIR / f"{pair.name}.png"
        save_image(hp, hazy)
        save_image(gp, clear)
        entry = {
            "name": pair.name,
            "hazy": str(hp.relative_to(root)),
            "gt": str(gp.relative_to(root)),
            "hazy_sha256": _sha256(hp),
            "gt_sha256": _sha256(gp),
        }
        if "t" in pair.meta:
            tp = root / TRANS_DIR / f"{pair.name}.png"
            save_transmission(tp, pair.meta["t"])
            entry["transmission"] = str(tp.relative_to(root))
        if "A" in pair.meta:
            entry["atmospheric_light"] = [float(a) for a in pair.meta["A"]]
        if "source" in pair.meta:
            entry["source"] = pair.meta["source"]
            entry["grid_index"] = list(pair.meta["grid_index"])
        entries.append(entry)
    manifest = {"split": ds.split, "grid": list(ds.grid), "pairs": entries}
    (root / MANIFEST).write_text(json.dumps(manifest, indent=1) + "\n")
    return root


# --- patchification --------------------------------------------------------------


def patchify_dataset(ds: PairedDataset, rows: int = 10, cols: int = 10) -> PairedDataset:
    """Cut every pair into a ``rows x cols`` grid of aligned, non-overlapping patches.

    Patches come out row-major and are named ``<source>_rRRcCC``.  Nothing is
    loaded here; each patch is a crop view onto its source.
    """
    if rows < 1 or cols < 1:
        raise ValueError("grid must be at least 1x1")
    out = []
    for pair in ds:
        h, w = pair.shape
        if h % rows or w % cols:
            raise ShapeError(f"image {pair.name} ({h}x{w}) does not divide into a {rows}x{cols} grid")
        ph, pw = h // rows, w // cols
        top0, left0 = (pair.box[0], pair.box[1]) if pair.box else (0, 0)
        for r in range(rows):
            for c in range(cols):
                name = pair.name if rows == cols == 1 else f"{pair.name}_r{r:02d}c{c:02d}"
                meta = {"source": pair.name, "grid_index": (r, c)}
                out.append(dataclasses.replace(
                    pair, name=name, box=(top0 + r * ph, left0 + c * pw, ph, pw), meta=meta,
                ))
    return PairedDataset(tuple(out), grid=(rows, cols), split=ds.split)


def assemble_grid(patches: list[np.ndarray], rows: int, cols: int) -> np.ndarray:
    """Inverse of patchification for one image: stitch row-major patches back together."""
    if len(patches) != rows * cols:
        raise ValueError(f"expected {rows * cols} patches, got {len(patches)}")
    return np.concatenate(
        [np.concatenate(patches[r * cols:(r + 1) * cols], axis=1) for r in range(rows)], axis=0
    )


# --- synthetic data ----------------------------------------------------------------


def procedural_clear_image(height: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth colour gradient overlaid with flat shapes and a fine sinusoidal texture."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    yy /= max(height - 1, 1)
    xx /= max(width - 1, 1)

    corners = rng.uniform(0.05, 0.95, size=(4, 3))
    img = (
        corners[0] * ((1 - yy) * (1 - xx))[..., None]
        + corners[1] * ((1 - yy) * xx)[..., None]
        + corners[2] * (yy * (1 - xx))[..., None]
        + corners[3] * (yy * xx)[..., None]
    )
    for _ in range(rng.integers(3, 7)):
        colour = rng.uniform(0.0, 1.0, size=3)
        cy, cx = rng.uniform(0, 1, size=2)
        if rng.random() < 0.5:
            r = rng.uniform(0.08, 0.3)
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
        else:
            hh, ww = rng.uniform(0.1, 0.4, size=2)
            mask = (np.abs(yy - cy) < hh / 2) & (np.abs(xx - cx) < ww / 2)
        img[mask] = colour
    freq = rng.uniform(4, 16, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    texture = 0.08 * np.sin(2 * np.pi * (freq[0] * yy + freq[1] * xx) + phase)
    return np.clip(img + texture[..., None], 0.0, 1.0)


def make_synthetic_dataset(n_pairs: int, height: int, width: int, seed: int = 0,
                           haze: HazeFieldParams | None = None,
                           A_range: tuple[float, float] = (0.7, 1.0),
                           split: str = "train") -> PairedDataset:
    """Procedural clear images hazed with per-pair random transmission fields and light.

    Each pair keeps its ``t`` and ``A`` in ``meta`` so the haze can be inverted exactly.
    """
    if height < 1 or width < 1 or height % 16 or width % 16:
        raise ShapeError(f"synthetic images must have sides divisible by 16, got {height}x{width}")
    lo, hi = A_range
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError(f"A_range {A_range} must satisfy 0 <= lo <= hi <= 1")
    haze = haze or HazeFieldParams()
    pairs = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n_pairs)):
        rng = np.random.default_rng(child)
        clear = procedural_clear_image(height, width, rng)
        field_params = dataclasses.replace(haze, seed=int(rng.integers(2**31)))
        t = generate_transmission(height, width, field_params)
        A = rng.uniform(lo, hi, size=3)
        hazy = synthesize_haze(clear, t, A)
        pairs.append(ImagePair(
            f"{i:05d}", hazy.astype(np.float32), clear.astype(np.float32),
            meta={"t": t, "A": A},
        ))
    return PairedDataset(tuple(pairs), split=split)


# --- batching ---------------------------------------------------------------------


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Shuffled sample order for one epoch, a pure function of (seed, epoch)."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """``H x W x 3`` array to a ``3 x H x W`` tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))


def from_tensor(x: torch.Tensor) -> np.ndarray:
    return x.detach().cpu().numpy().transpose(1, 2, 0)


def iterate_batches(ds: PairedDataset, batch_size: int, seed: int = 0, epoch: int = 0,
                    shuffle: bool = True):
    """Yield ``(indices, hazy, clear)`` with ``N x 3 x H x W`` float32 tensors."""
    order = epoch_order(len(ds), seed, epoch) if shuffle else np.arange(len(ds))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        loaded = [ds[int(i)].load() for i in idx]
        hazy = torch.stack([to_tensor(h) for h, _ in loaded])
        clear = torch.stack([to_tensor(c) for _, c in loaded])
        yield [int(i) for i in idx], hazy, clear
