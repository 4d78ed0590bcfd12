import json
import time

import numpy as np
import pytest
import torch

from hazeforge import datapipe
from hazeforge.datapipe import (
    PIPELINE_STAGES,
    ImagePair,
    PairedDataset,
    assemble_grid,
    epoch_order,
    iterate_batches,
    load_pairs,
    make_synthetic_dataset,
    patchify_dataset,
    write_dataset,
)
from hazeforge.errors import PairingError, ShapeError
from hazeforge.imageio import load_image, save_image
from hazeforge.metrics import psnr
from hazeforge.scattering import HazeFieldParams, invert_haze


def _array_dataset(n=2, h=40, w=60, seed=0):
    rng = np.random.default_rng(seed)
    pairs = tuple(ImagePair(f"{i:02d}", rng.random((h, w, 3)).astype(np.float32),
                            rng.random((h, w, 3)).astype(np.float32)) for i in range(n))
    return PairedDataset(pairs)


def test_patchify_counts_and_shapes():
    ds = _array_dataset(3, 40, 60)
    p = patchify_dataset(ds, 4, 5)
    assert len(p) == 60 and p.grid == (4, 5)
    assert all(x.shape == (10, 12) for x in p)
    assert p[0].name == "00_r00c00" and p[6].name == "00_r01c01" and p[20].name == "01_r00c00"


def test_patchify_reassembles_bitwise():
    ds = _array_dataset(2, 40, 60)
    p = patchify_dataset(ds, 4, 5)
    for k, src in enumerate(ds):
        hazy_patches = [p[k * 20 + i].load()[0] for i in range(20)]
        clear_patches = [p[k * 20 + i].load()[1] for i in range(20)]
        hazy, clear = src.load()
        assert np.array_equal(assemble_grid(hazy_patches, 4, 5), hazy)
        assert np.array_equal(assemble_grid(clear_patches, 4, 5), clear)


def test_patchify_preserves_pixel_multiset():
    ds = _array_dataset(1, 20, 20)
    p = patchify_dataset(ds, 2, 2)
    flat = np.sort(np.concatenate([x.load()[0].ravel() for x in p]))
    assert np.array_equal(flat, np.sort(ds[0].load()[0].ravel()))


def test_patchify_unit_grid_is_identity():
    ds = _array_dataset(2)
    p = patchify_dataset(ds, 1, 1)
    assert [x.name for x in p] == [x.name for x in ds]
    for a, b in zip(ds, p):
        assert all(np.array_equal(u, v) for u, v in zip(a.load(), b.load()))


def test_patchify_nested():
    ds = _array_dataset(1, 40, 40)
    twice = patchify_dataset(patchify_dataset(ds, 2, 2), 2, 2)
    once = patchify_dataset(ds, 4, 4)
    # same set of pixel blocks, just ordered by outer tile first
    got = sorted(x.load()[0].tobytes() for x in twice)
    ref = sorted(x.load()[0].tobytes() for x in once)
    assert got == ref


def test_patchify_indivisible_names_image():
    ok = _array_dataset(1, 30, 60)[0]
    bad = ImagePair("odd", np.zeros((40, 60, 3), np.float32), np.zeros((40, 60, 3), np.float32))
    with pytest.raises(ShapeError, match="odd"):
        patchify_dataset(PairedDataset((ok, bad)), 3, 5)


def test_patchify_full_resolution_layout():
    pair = ImagePair("big", np.zeros((1200, 1600, 3), np.float32), np.zeros((1200, 1600, 3), np.float32))
    p = patchify_dataset(PairedDataset((pair,) * 45), 10, 10)
    assert len(p) == 4500
    assert {x.shape for x in p} == {(120, 160)}


def _write_pair(root, hazy_name, gt_name, shape=(16, 16, 3), seed=0):
    rng = np.random.default_rng(seed)
    save_image(root / "hazy" / hazy_name, rng.random(shape))
    save_image(root / "GT" / gt_name, rng.random(shape))


def test_load_pairs_by_stem(tmp_path):
    for i in (3, 1, 2):
        _write_pair(tmp_path, f"{i:02d}.png", f"{i:02d}.png", seed=i)
    ds = load_pairs(tmp_path, "stem")
    assert [p.name for p in ds] == ["01", "02", "03"]
    assert ds[0].shape == (16, 16)


def test_load_pairs_nh_haze_suffixes(tmp_path):
    for i in range(1, 4):
        _write_pair(tmp_path, f"{i:02d}_hazy.png", f"{i:02d}_GT.png", seed=i)
    for conv in ("nh-haze", "auto"):
        ds = load_pairs(tmp_path, conv)
        assert [p.name for p in ds] == ["01", "02", "03"]


def test_load_pairs_empty_directory(tmp_path):
    assert len(load_pairs(tmp_path)) == 0


def test_load_pairs_orphan_named(tmp_path):
    _write_pair(tmp_path, "01_hazy.png", "01_GT.png")
    save_image(tmp_path / "hazy" / "07_hazy.png", np.zeros((16, 16, 3)))
    with pytest.raises(PairingError, match="07_hazy"):
        load_pairs(tmp_path)


def test_load_pairs_dimension_mismatch(tmp_path):
    save_image(tmp_path / "hazy" / "01.png", np.zeros((16, 16, 3)))
    save_image(tmp_path / "GT" / "01.png", np.zeros((16, 20, 3)))
    with pytest.raises(ShapeError, match="01"):
        load_pairs(tmp_path)


def test_load_pairs_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_pairs(tmp_path / "nope")


def test_synthetic_same_seed_bitwise():
    a = make_synthetic_dataset(4, 32, 48, seed=5)
    b = make_synthetic_dataset(4, 32, 48, seed=5)
    for x, y in zip(a, b):
        assert all(np.array_equal(u, v) for u, v in zip(x.load(), y.load()))
        assert np.array_equal(x.meta["t"], y.meta["t"]) and np.array_equal(x.meta["A"], y.meta["A"])
    c = make_synthetic_dataset(4, 32, 48, seed=6)
    assert not np.array_equal(a[0].load()[0], c[0].load()[0])


def test_synthetic_inversion_beats_hazy():
    ds = make_synthetic_dataset(16, 64, 64, seed=2)
    for pair in ds:
        hazy, clear = pair.load()
        restored = invert_haze(hazy.astype(np.float64), pair.meta["t"], pair.meta["A"])
        assert psnr(hazy, clear) < psnr(restored, clear)


def test_synthetic_respects_haze_parameters():
    ds = make_synthetic_dataset(3, 32, 32, seed=1, haze=HazeFieldParams(t_range=(0.4, 0.6)), A_range=(0.8, 0.9))
    for pair in ds:
        assert 0.4 - 1e-12 <= pair.meta["t"].min() and pair.meta["t"].max() <= 0.6 + 1e-12
        assert np.all((pair.meta["A"] >= 0.8) & (pair.meta["A"] <= 0.9))


@pytest.mark.parametrize("shape", [(30, 32), (32, 40), (0, 32)])
def test_synthetic_invalid_dims(shape):
    with pytest.raises(ShapeError):
        make_synthetic_dataset(1, *shape)


def test_synthetic_generation_budget():
    t0 = time.perf_counter()
    ds = make_synthetic_dataset(64, 64, 64, seed=0)
    elapsed = time.perf_counter() - t0
    assert len(ds) == 64
    assert elapsed < 10.0


def test_pipeline_has_no_augmentation():
    augment_words = ("flip", "rot", "jitter", "augment", "noise", "color", "colour", "random_crop")
    assert PIPELINE_STAGES == ("load", "crop", "to_tensor", "stack")
    assert not any(w in stage for stage in PIPELINE_STAGES for w in augment_words)
    public = [n for n in dir(datapipe) if not n.startswith("_")]
    assert not any(w in n.lower() for n in public for w in ("flip", "rotate", "jitter", "augment"))


def test_batches_are_exact_crops():
    ds = patchify_dataset(_array_dataset(2, 32, 32), 2, 2)
    seen = 0
    for ids, hazy, clear in iterate_batches(ds, 3, seed=1):
        for k, i in enumerate(ids):
            h, c = ds[i].load()
            assert torch.equal(hazy[k], torch.from_numpy(h).permute(2, 0, 1))
            assert torch.equal(clear[k], torch.from_numpy(c).permute(2, 0, 1))
            seen += 1
    assert seen == len(ds)


def test_shuffle_reproducible_and_epoch_dependent():
    assert np.array_equal(epoch_order(50, 3, 2), epoch_order(50, 3, 2))
    assert not np.array_equal(epoch_order(50, 3, 2), epoch_order(50, 3, 3))
    assert sorted(epoch_order(50, 3, 2)) == list(range(50))
    ds = _array_dataset(7, 16, 16)
    a = [ids for ids, _, _ in iterate_batches(ds, 2, seed=4, epoch=1)]
    b = [ids for ids, _, _ in iterate_batches(ds, 2, seed=4, epoch=1)]
    assert a == b
    assert [ids for ids, _, _ in iterate_batches(ds, 3, shuffle=False)] == [[0, 1, 2], [3, 4, 5], [6]]


def test_write_dataset_round_trip(tmp_path):
    ds = make_synthetic_dataset(3, 32, 32, seed=0)
    write_dataset(ds, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert [e["name"] for e in manifest["pairs"]] == ["00000", "00001", "00002"]
    assert all(len(e["hazy_sha256"]) == 64 and "transmission" in e for e in manifest["pairs"])
    loaded = load_pairs(tmp_path)
    assert len(loaded) == 3
    hazy, _ = loaded[1].load()
    assert np.max(np.abs(hazy - ds[1].load()[0])) <= 0.5 / 255 + 1e-6


def test_patch_pairs_from_disk(tmp_path):
    write_dataset(_array_dataset(1, 40, 40), tmp_path / "src")
    src = load_pairs(tmp_path / "src")
    p = patchify_dataset(src, 2, 2)
    write_dataset(p, tmp_path / "out")
    back = load_pairs(tmp_path / "out")
    assert [x.name for x in back] == ["00_r00c00", "00_r00c01", "00_r01c00", "00_r01c01"]
    full = load_image(tmp_path / "src" / "hazy" / "00.png")
    assert np.array_equal(assemble_grid([x.load()[0] for x in back], 2, 2), full)
