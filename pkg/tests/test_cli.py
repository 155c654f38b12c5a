import json

import numpy as np
import pytest

from sstnet import hsi
from sstnet.checkpoint import save_checkpoint
from sstnet.cli import main
from sstnet.sst import SstConfig, SstModel


@pytest.fixture
def clean_dir(tmp_path):
    d = tmp_path / "clean"
    assert main(["synth", "--output", str(d), "--count", "3", "--size", "32", "--bands", "4", "--seed", "1"]) == 0
    return d


def _bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_synth_writes_cubes(clean_dir):
    files = sorted(clean_dir.iterdir())
    assert [f.name for f in files] == [f"synth_{i:04d}.hsic" for i in range(3)]
    assert hsi.load_cube(files[0]).shape == (32, 32, 4)


def test_simulate_then_eval(tmp_path, clean_dir, capsys):
    noisy = tmp_path / "noisy"
    assert main(["simulate", "--input", str(clean_dir), "--output", str(noisy), "--sigma", "30", "--seed", "2"]) == 0
    rec = json.loads((noisy / "synth_0000.noise.json").read_text())
    assert rec["spec"]["kind"] == "gaussian_iid"
    assert "sigma" in (noisy / "synth_0000.noise.txt").read_text()
    capsys.readouterr()
    report = tmp_path / "report"
    assert main(["eval", "--reference", str(clean_dir), "--input", str(noisy), "--output", str(report)]) == 0
    out = capsys.readouterr().out
    assert "# noise: gaussian_iid" in out and "timestamp" not in out
    mean = [ln for ln in (report / "metrics.csv").read_text().splitlines() if ln.startswith("mean,")][0]
    assert abs(float(mean.split(",")[1]) - 18.59) < 0.6
    assert (report / "metrics.png").stat().st_size > 0


def test_simulate_deterministic(tmp_path, clean_dir):
    outs = []
    for name in ("a", "b"):
        d = tmp_path / name
        main(["simulate", "--input", str(clean_dir), "--output", str(d), "--noise-kind", "mixture", "--sigma", "10,70", "--seed", "4"])
        outs.append(_bytes(d))
    assert outs[0] == outs[1]


def test_eval_warns_on_unmatched(tmp_path, clean_dir, caplog):
    partial = tmp_path / "partial"
    partial.mkdir()
    (partial / "synth_0000.hsic").write_bytes((clean_dir / "synth_0000.hsic").read_bytes())
    assert main(["eval", "--reference", str(clean_dir), "--input", str(partial)]) == 0
    assert "unmatched reference file synth_0001.hsic" in caplog.text


def test_eval_no_match_is_data_error(tmp_path, clean_dir):
    other = tmp_path / "other"
    other.mkdir()
    hsi.save_cube(hsi.synthetic_cube(8, 8, 4, seed=0), other / "x.hsic")
    assert main(["eval", "--reference", str(clean_dir), "--input", str(other)]) == 3


def test_train_denoise_round(tmp_path, clean_dir, capsys):
    ckpt, rep = tmp_path / "m.ckpt", tmp_path / "rep"
    args = ["train", "--input", str(clean_dir), "--val", str(clean_dir), "--checkpoint", str(ckpt), "--output", str(rep),
            "--bands", "4", "--preset", "desk", "--epochs", "2", "--batch", "2", "--patch", "16", "--sigma", "25", "--lr", "0.001"]
    assert main(args) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "epoch,lr,loss,val_psnr,steps" and lines[2].startswith("2,")
    assert {"config.txt", "train_log.csv", "training.png"} <= {p.name for p in rep.iterdir()}
    first = ckpt.read_bytes()
    assert main(args) == 0
    assert ckpt.read_bytes() == first

    den = tmp_path / "den"
    assert main(["denoise", "--input", str(clean_dir), "--output", str(den), "--checkpoint", str(ckpt), "--tile", "16", "--overlap", "4"]) == 0
    out = hsi.load_cube(den / "synth_0000.hsic")
    assert out.shape == (32, 32, 4) and np.isfinite(out.data).all()


def test_denoise_band_mismatch_is_data_error(tmp_path, clean_dir):
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(SstModel(SstConfig.desk(bands=8)), ckpt)
    assert main(["denoise", "--input", str(clean_dir), "--output", str(tmp_path / "o"), "--checkpoint", str(ckpt)]) == 3


def test_gradcheck_default_passes(tmp_path, capsys):
    assert main(["gradcheck", "--output", str(tmp_path / "g.txt")]) == 0
    assert "overall: PASS" in capsys.readouterr().out
    assert (tmp_path / "g.txt").read_text().count("PASS") >= 11


def test_render(tmp_path, clean_dir):
    out = tmp_path / "img.ppm"
    assert main(["render", "--input", str(clean_dir / "synth_0000.hsic"), "--output", str(out), "--band-triplet", "0,1,3"]) == 0
    assert hsi.read_ppm(out).shape == (32, 32, 3)
    assert main(["render", "--input", str(clean_dir / "synth_0000.hsic"), "--output", str(out)]) == 2


@pytest.mark.parametrize(
    "argv, code",
    [
        (["simulate", "--input", "x"], 2),
        (["simulate", "--input", "/nonexistent/dir", "--output", "/tmp/o"], 3),
        (["train", "--colour", "red"], 2),
        (["gradcheck", "--heads", "3"], 2),
    ],
)
def test_exit_codes(argv, code):
    try:
        assert main(argv) == code
    except SystemExit as exc:
        assert exc.code == code


def test_corrupt_checkpoint_is_data_error(tmp_path, clean_dir):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert main(["denoise", "--input", str(clean_dir), "--output", str(tmp_path / "o"), "--checkpoint", str(bad)]) == 3
