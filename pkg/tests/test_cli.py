import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from hazeforge.cli import EXIT_CODES, read_train_config, run_cli
from hazeforge.codec import ChannelConfig
from hazeforge.errors import ConfigError
from hazeforge.imageio import load_image, load_image_shape, save_image
from hazeforge.models import build_model
from hazeforge.trainer import Checkpoint, load_checkpoint, save_checkpoint


def _tree_bytes(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run_cli(["synth", "--n", "5", "--size", "32x48", "--seed", "3", "--out", str(root / "data")]) == 0
    ckpt = root / "tiny.hzf"
    assert run_cli(["train", "--model", "dmphn", "--data", str(root / "data"), "--out-ckpt", str(ckpt),
                    "--channels", "4,8,16", "--epochs", "1", "--batch-size", "2", "--seed", "1"]) == 0
    return root


def test_synth_layout_and_idempotent(tmp_path):
    args = ["synth", "--n", "3", "--size", "32x32", "--seed", "7", "--t-min", "0.4", "--t-max", "0.8"]
    assert run_cli(args + ["--out", str(tmp_path / "a")]) == 0
    assert run_cli(args + ["--out", str(tmp_path / "b")]) == 0
    a, b = _tree_bytes(tmp_path / "a"), _tree_bytes(tmp_path / "b")
    assert a == b
    assert {"hazy/00000.png", "GT/00000.png", "trans/00000.png", "manifest.json"} <= set(a)


def test_prepare_counts_and_idempotent(workspace, tmp_path):
    for out in ("p1", "p2"):
        assert run_cli(["prepare", "--root", str(workspace / "data"), "--grid", "2x3",
                        "--out", str(tmp_path / out)]) == 0
    assert _tree_bytes(tmp_path / "p1") == _tree_bytes(tmp_path / "p2")
    hazy = sorted((tmp_path / "p1" / "hazy").glob("*.png"))
    assert len(hazy) == 5 * 6
    assert {load_image_shape(p) for p in hazy} == {(16, 16)}


def test_prepare_indivisible_is_shape_error(workspace, tmp_path, capsys):
    code = run_cli(["prepare", "--root", str(workspace / "data"), "--grid", "5x5", "--out", str(tmp_path)])
    assert code == EXIT_CODES["shape"] == 4
    assert capsys.readouterr().err.startswith("hazeforge: error[shape]:")


def test_train_writes_checkpoint(workspace):
    ckpt = load_checkpoint(workspace / "tiny.hzf")
    assert ckpt.model_kind == "dmphn" and ckpt.channels == ChannelConfig((4, 8, 16))
    assert ckpt.global_step == 3 and ckpt.seed == 1


def test_train_is_idempotent(workspace, tmp_path):
    base = ["train", "--model", "dmshn", "--data", str(workspace / "data"), "--channels", "4,8,16",
            "--epochs", "1", "--batch-size", "4", "--seed", "2"]
    assert run_cli(base + ["--out-ckpt", str(tmp_path / "a.hzf")]) == 0
    assert run_cli(base + ["--out-ckpt", str(tmp_path / "b.hzf")]) == 0
    assert (tmp_path / "a.hzf").read_bytes() == (tmp_path / "b.hzf").read_bytes()


def test_train_config_file_and_flag_override(workspace, tmp_path):
    cfg = tmp_path / "train.cfg"
    cfg.write_text("[train]\nmodel_kind = dmshn\nbase_channels = 4,8,16\nmax_epochs = 3\n"
                   "batch_size = 5\nlambda_p = 0.01\nlr_schedule = linear\n")
    assert run_cli(["train", "--data", str(workspace / "data"), "--config", str(cfg), "--epochs", "1",
                    "--out-ckpt", str(tmp_path / "c.hzf"), "--log", str(tmp_path / "log.jsonl")]) == 0
    ckpt = load_checkpoint(tmp_path / "c.hzf")
    hp = ckpt.hyperparameters
    assert ckpt.model_kind == "dmshn" and hp["max_epochs"] == 1 and hp["batch_size"] == 5
    assert hp["weights"]["lambda_p"] == 0.01 and hp["lr_schedule"] == "linear"
    assert len((tmp_path / "log.jsonl").read_text().splitlines()) == 1


def test_read_train_config_errors(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[train]\nwhatever = 1\n")
    with pytest.raises(ConfigError):
        read_train_config(bad)
    bad.write_text("[train]\nbatch_size = many\n")
    with pytest.raises(ConfigError):
        read_train_config(bad)
    bad.write_text("[other]\nx = 1\n")
    with pytest.raises(ConfigError):
        read_train_config(bad)


def test_infer_file_and_directory(workspace, tmp_path):
    src = workspace / "data" / "hazy" / "00000.png"
    assert run_cli(["infer", "--ckpt", str(workspace / "tiny.hzf"), "--in", str(src),
                    "--out", str(tmp_path / "one.png")]) == 0
    assert load_image_shape(tmp_path / "one.png") == (32, 48)
    out_dir = tmp_path / "many"
    assert run_cli(["infer", "--ckpt", str(workspace / "tiny.hzf"), "--in", str(workspace / "data" / "hazy"),
                    "--out", str(out_dir)]) == 0
    assert len(list(out_dir.glob("*.png"))) == 5
    first = (out_dir / "00000.png").read_bytes()
    assert run_cli(["infer", "--ckpt", str(workspace / "tiny.hzf"), "--in", str(src),
                    "--out", str(out_dir / "again.png")]) == 0
    assert (out_dir / "again.png").read_bytes() == first


@pytest.mark.slow
def test_infer_full_resolution(workspace, tmp_path):
    img = np.random.default_rng(0).random((1200, 1600, 3))
    save_image(tmp_path / "big.png", img)
    assert run_cli(["infer", "--ckpt", str(workspace / "tiny.hzf"), "--in", str(tmp_path / "big.png"),
                    "--out", str(tmp_path / "big_out.png")]) == 0
    assert load_image(tmp_path / "big_out.png").shape == (1200, 1600, 3)


def test_infer_indivisible_image(workspace, tmp_path):
    save_image(tmp_path / "odd.png", np.zeros((30, 30, 3)))
    assert run_cli(["infer", "--ckpt", str(workspace / "tiny.hzf"), "--in", str(tmp_path / "odd.png"),
                    "--out", str(tmp_path / "o.png")]) == EXIT_CODES["shape"]


def _read_results(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_eval_rows_and_mean(workspace, tmp_path, capsys):
    res = tmp_path / "results.csv"
    assert run_cli(["eval", "--ckpt", str(workspace / "tiny.hzf"), "--data", str(workspace / "data"),
                    "--results", str(res), "--save-dir", str(tmp_path / "pred")]) == 0
    rows = _read_results(res)
    assert len(rows) == 6 and rows[-1]["name"] == "mean"
    assert list(rows[0]) == ["name", "psnr_db", "ssim", "runtime_s"]
    for key in ("psnr_db", "ssim", "runtime_s"):
        vals = [float(r[key]) for r in rows[:-1]]
        assert abs(float(rows[-1][key]) - sum(vals) / len(vals)) <= 1e-9
    table = capsys.readouterr().out
    assert "PSNR" in table and "SSIM" in table and table.count("\n") >= 7
    assert len(list((tmp_path / "pred").glob("*.png"))) == 5


def test_eval_idempotent_modulo_timing(workspace, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        run_cli(["eval", "--ckpt", str(workspace / "tiny.hzf"), "--data", str(workspace / "data"),
                 "--results", str(tmp_path / name), "--quantized"])
        outs.append([(r["name"], r["psnr_db"], r["ssim"]) for r in _read_results(tmp_path / name)])
    assert outs[0] == outs[1]


def test_bench_report(tmp_path, capsys):
    assert run_cli(["bench", "--model", "dmshn", "--channels", "4,8,16", "--size", "32x32", "--reps", "2",
                    "--warmup", "0", "--out", str(tmp_path / "b.json")]) == 0
    report = json.loads((tmp_path / "b.json").read_text())
    assert report["model_kind"] == "dmshn" and report["reps"] == 2 and report["outputs_identical"]
    assert "hardware" in report


def test_bench_from_checkpoint(workspace):
    assert run_cli(["bench", "--ckpt", str(workspace / "tiny.hzf"), "--size", "32x32", "--reps", "1",
                    "--warmup", "0"]) == 0


def test_gallery_strips(workspace, tmp_path):
    assert run_cli(["gallery", "--ckpt", str(workspace / "tiny.hzf"), "--data", str(workspace / "data"),
                    "--out", str(tmp_path), "--limit", "2", "--gap", "3"]) == 0
    strips = sorted(tmp_path.glob("*_strip.png"))
    assert len(strips) == 2
    strip = load_image(strips[0])
    assert strip.shape == (32, 3 * 48 + 2 * 3, 3)
    hazy = load_image(workspace / "data" / "hazy" / "00000.png")
    assert np.array_equal(strip[:, :48], hazy)


@pytest.mark.parametrize("argv, category", [
    (["nonsense"], "usage"),
    (["synth", "--out"], "usage"),
    (["synth", "--size", "abc", "--out", "x"], "usage"),
    (["infer", "--ckpt", "/nope.hzf", "--in", "/nope.png", "--out", "/tmp/x.png"], "missing-file"),
    (["synth", "--size", "30x30", "--out", "{tmp}/s"], "shape"),
    (["synth", "--t-min", "0.9", "--t-max", "0.2", "--out", "{tmp}/s"], "config"),
])
def test_error_categories(argv, category, tmp_path, capsys):
    argv = [a.replace("{tmp}", str(tmp_path)) for a in argv]
    assert run_cli(argv) == EXIT_CODES[category]
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"hazeforge: error[{category}]:")


def test_exit_codes_distinct():
    assert len(set(EXIT_CODES.values())) == len(EXIT_CODES)


def test_checkpoint_errors(tmp_path):
    bad = tmp_path / "bad.hzf"
    bad.write_bytes(b"garbage-garbage")
    argv = ["infer", "--ckpt", str(bad), "--in", str(bad), "--out", str(tmp_path / "o.png")]
    assert run_cli(argv) == EXIT_CODES["checkpoint"]
    save_checkpoint(Checkpoint.from_model(build_model("dmphn", ChannelConfig((4, 8, 16)))), bad)
    raw = bytearray(bad.read_bytes())
    raw[4] = 99
    bad.write_bytes(bytes(raw))
    assert run_cli(argv) == EXIT_CODES["checkpoint-version"]


def test_pairing_error(tmp_path):
    save_image(tmp_path / "d" / "hazy" / "01.png", np.zeros((16, 16, 3)))
    assert run_cli(["prepare", "--root", str(tmp_path / "d"), "--out", str(tmp_path / "o")]) == EXIT_CODES["pairing"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hazeforge", "synth", "--n", "1", "--size", "16x16",
                           "--out", str(tmp_path / "s")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "hazeforge", "bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and proc.stderr.startswith("hazeforge: error[usage]")
