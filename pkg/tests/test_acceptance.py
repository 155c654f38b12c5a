"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""

import time
from itertools import product

import numpy as np
import pytest
from oracles import brute_sam, brute_ssim_band

from sstnet import hsi, sst
from sstnet.autodiff import Tensor
from sstnet.cli import main
from sstnet.metrics import psnr, sam, ssim
from sstnet.noise import NoiseSpec
from sstnet.sst import SstConfig, SstModel
from sstnet.train import TrainConfig, make_val_pairs, train


@pytest.fixture
def verdict(capsys):
    def report(n, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, detail

    return report


def _mean_psnr(csv_text):
    row = [ln for ln in csv_text.splitlines() if ln.startswith("mean,")][0]
    return float(row.split(",")[1])


def test_c1_noisy_rows(tmp_path, verdict):
    t0 = time.perf_counter()
    clean = tmp_path / "clean"
    clean.mkdir()
    for i in range(2):
        hsi.save_cube(hsi.synthetic_cube(256, 256, 8, seed=100 + i), clean / f"c{i}.hsic")
    got, ok = {}, True
    for sigma, expect in [(10, 28.13), (30, 18.59), (50, 14.15), (70, 11.23)]:
        noisy, rep = tmp_path / f"n{sigma}", tmp_path / f"r{sigma}"
        assert main(["simulate", "--input", str(clean), "--output", str(noisy), "--sigma", str(sigma), "--seed", "1"]) == 0
        assert main(["eval", "--reference", str(clean), "--input", str(noisy), "--output", str(rep)]) == 0
        got[sigma] = _mean_psnr((rep / "metrics.csv").read_text())
        ok &= abs(got[sigma] - expect) <= 0.2
    dt = time.perf_counter() - t0
    detail = ", ".join(f"sigma {s}: {v:.2f} dB" for s, v in got.items()) + f"; {dt:.1f} s"
    verdict(1, "noisy-row PSNR", ok and dt < 60, detail)


def test_c2_gradient_integrity(tmp_path, capsys, verdict):
    t0 = time.perf_counter()
    code = main(["gradcheck", "--preset", "desk", "--bands", "4", "--size", "8", "--eps", "1e-5"])
    dt = time.perf_counter() - t0
    text = capsys.readouterr().out
    rows = [ln.split() for ln in text.splitlines()[1:-1]]
    worst = max(float(r[1]) for r in rows)
    verdict(2, "gradient check", code == 0 and worst < 1e-4 and dt < 120,
            f"{len(rows)} components, worst {worst:.2e}, {dt:.1f} s")


def test_c3_structural_round_trips(verdict):
    rng = np.random.default_rng(3)
    cases = 0
    ok = True
    for h, w, m in product((8, 16, 32), (8, 16, 32), (2, 4, 8)):
        c = int(rng.integers(1, 9))
        x = rng.normal(size=(2, h, w, c))
        back = sst.window_reverse(sst.window_partition(Tensor(x), m), h, w, m, batched=True).data
        ok &= back.tobytes() == x.tobytes()
        for dy, dx in ((m // 2, m // 2), (-m // 2, m // 2), (int(rng.integers(-h, h)), int(rng.integers(-w, w)))):
            s = sst.cyclic_shift(sst.cyclic_shift(Tensor(x), dy, dx), -dy, -dx).data
            ok &= s.tobytes() == x.tobytes()
        cases += 1
    verdict(3, "window/shift round trips", ok, f"{cases} (H, W, M) cases bit-exact")


def _attn(rng, c, heads=None, window=None):
    p = {k: Tensor(rng.normal(size=(c, c)) * 0.5) for k in ("wq", "wk", "wv", "proj_w")}
    p["proj_b"] = Tensor(rng.normal(size=c) * 0.1)
    if window:
        p["bias_table"] = Tensor(np.zeros((heads, (2 * window - 1) ** 2)))
    return p


def test_c4_attention_symmetries(verdict):
    rng = np.random.default_rng(4)
    p = _attn(rng, 8)
    x = rng.normal(size=(6, 5, 8))
    perm = rng.permutation(30)
    xp = x.reshape(30, 8)[perm].reshape(6, 5, 8)
    oa, aa = sst.gsa_forward(Tensor(x), p, 2, return_attention=True)
    ob, ab = sst.gsa_forward(Tensor(xp), p, 2, return_attention=True)
    gsa_out = np.max(np.abs(oa.data.reshape(30, 8)[perm] - ob.data.reshape(30, 8)))
    gsa_att = np.max(np.abs(aa.data - ab.data))

    p = _attn(rng, 8, heads=2, window=4)
    tok = rng.normal(size=(3, 16, 8))
    perm = rng.permutation(16)
    a = sst.nlsa_forward(Tensor(tok), p, 2).data
    b = sst.nlsa_forward(Tensor(tok[:, perm]), p, 2).data
    nlsa = np.max(np.abs(a[:, perm] - b))

    bias_ok = True
    for m in (2, 4, 8):
        idx = sst.relative_position_index(m)
        pos = [(i, j) for i in range(m) for j in range(m)]
        seen = {}
        for ia, pa in enumerate(pos):
            for ib, pb in enumerate(pos):
                d = (pa[0] - pb[0], pa[1] - pb[1])
                bias_ok &= seen.setdefault(d, idx[ia, ib]) == idx[ia, ib]
    ok = gsa_out < 1e-10 and gsa_att < 1e-10 and nlsa < 1e-10 and bias_ok
    verdict(4, "attention symmetries", ok,
            f"GSA out {gsa_out:.1e}, GSA attn {gsa_att:.1e}, NLSA {nlsa:.1e}, bias equality {bias_ok}")


def test_c5_residual_identities(verdict):
    rng = np.random.default_rng(5)
    cfg = SstConfig.desk(bands=4)
    model = SstModel(cfg, seed=1, dtype=np.float64)
    for name, prm in model.params.items():
        if prm.ndim == 1 or name.endswith("bias_table"):
            prm.data[...] = rng.normal(size=prm.shape)
    model.zero_output_projections()
    z = rng.normal(size=(8, 8, cfg.channels))
    sstl = all(
        sst.sstl_forward(Tensor(z), model.layer_params(0, l), cfg, sst.is_shifted(l)).data.tobytes() == z.tobytes()
        for l in range(cfg.sstl)
    )
    rssb = sst.rssb_forward(Tensor(z), model.block_params(0), cfg).data.tobytes() == z.tobytes()
    y = rng.uniform(size=(13, 11, 4))
    net = model(y).data.tobytes() == y.tobytes()
    verdict(5, "residual identities", sstl and rssb and net, f"SSTL {sstl}, RSSB {rssb}, SST {net}")


def test_c6_complexity(verdict):
    full = SstConfig.full_scale()
    lin = all(sst.count_flops(full, 2 * h, w) == 2 * sst.count_flops(full, h, w) for h, w in ((64, 64), (128, 64), (256, 512)))
    gflops = sst.count_flops(full, 512, 512) / 1e9
    params = sst.count_params(full)
    ok_g = abs(gflops - 20.7) <= 2.07
    ok_p = 3.5e6 <= params <= 4.8e6
    detail = f"linear {lin}; {gflops:.1f} GFLOPs at 512x512x31 (target 20.7 +/- 10%: {ok_g}); {params} params (in bracket: {ok_p})"
    verdict(6, "complexity accounting", lin and ok_g and ok_p, detail)


def test_c7_learning_smoke(verdict):
    t0 = time.perf_counter()
    spec = NoiseSpec("gaussian_iid", 25.0)
    cubes = [hsi.synthetic_cube(32, 32, 8, seed=i) for i in range(64)]
    val = [hsi.synthetic_cube(32, 32, 8, seed=1000 + i) for i in range(8)]
    tc = TrainConfig(batch=8, epochs=63, lr=2e-3, lr_drop_epoch=50, patch=32, scales=(1.0,), strides=(32,), max_steps=500, seed=0)
    model, hist = train(cubes, SstConfig.desk(bands=8), tc, spec)
    pairs = make_val_pairs(val, spec, 0)
    noisy = float(np.mean([psnr(c, n) for c, n in pairs]))
    den = float(np.mean([psnr(c, model(n).data) for c, n in pairs]))
    dt = time.perf_counter() - t0
    ok = hist[-1]["steps"] <= 500 and den - noisy >= 3.0 and dt < 600
    verdict(7, "learning smoke test", ok,
            f"noisy {noisy:.2f} dB -> denoised {den:.2f} dB (+{den - noisy:.2f}), {hist[-1]['steps']} steps, {dt:.0f} s")


def test_c8_metric_oracles(verdict):
    rng = np.random.default_rng(8)
    gap_ssim = gap_sam = 0.0
    for _ in range(3):
        x = rng.uniform(size=(16, 16, 8))
        y = np.clip(x + rng.normal(scale=0.1, size=x.shape), 0, 1)
        brute = np.mean([brute_ssim_band(x[:, :, b], y[:, :, b]) for b in range(8)])
        gap_ssim = max(gap_ssim, abs(ssim(x, y) - brute))
        gap_sam = max(gap_sam, abs(sam(x, y) - brute_sam(x, y)))
    x = rng.uniform(0.05, 1, size=(16, 16, 8))
    scale = rng.uniform(0.1, 10, size=(16, 16, 1))
    y = rng.uniform(0.05, 1, size=(16, 16, 8))
    inv = abs(sam(x * scale, y) - sam(x, y))
    ident = ssim(x, x) == 1.0 and sam(x, x) == 0.0
    ok = gap_ssim < 1e-9 and gap_sam < 1e-9 and inv < 1e-9 and ident
    verdict(8, "metric oracles", ok,
            f"SSIM gap {gap_ssim:.1e}, SAM gap {gap_sam:.1e}, scale invariance {inv:.1e}, identities {ident}")


def _tree(d):
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


def _pipeline(root):
    clean, noisy, den, rep, trep = (root / n for n in ("clean", "noisy", "den", "rep", "trep"))
    ckpt = root / "m.ckpt"
    steps = [
        ["synth", "--output", str(clean), "--count", "3", "--size", "32", "--bands", "4", "--seed", "5"],
        ["simulate", "--input", str(clean), "--output", str(noisy), "--noise-kind", "mixture", "--sigma", "10,70", "--seed", "5"],
        ["train", "--input", str(clean), "--val", str(clean), "--checkpoint", str(ckpt), "--output", str(trep), "--preset", "desk",
         "--bands", "4", "--epochs", "2", "--batch", "2", "--patch", "16", "--sigma", "25", "--lr", "0.001", "--seed", "5"],
        ["denoise", "--input", str(noisy), "--output", str(den), "--checkpoint", str(ckpt), "--tile", "16", "--overlap", "4"],
        ["eval", "--reference", str(clean), "--input", str(den), "--output", str(rep), "--checkpoint", str(ckpt)],
        ["render", "--input", str(den / "synth_0000.hsic"), "--output", str(root / "img.ppm"), "--band-triplet", "0,1,2"],
        ["gradcheck", "--output", str(root / "grad.txt")],
    ]
    for argv in steps:
        assert main(argv) == 0, argv
    tree = _tree(root)
    # paths embedded in the reports differ between the two roots
    return {k: v.replace(str(root).encode(), b"ROOT") for k, v in tree.items()}


def test_c9_determinism(tmp_path, verdict):
    a, b = _pipeline(tmp_path / "a"), _pipeline(tmp_path / "b")
    diff = sorted(k for k in set(a) | set(b) if a.get(k) != b.get(k))
    verdict(9, "determinism", not diff and len(a) > 20, f"{len(a)} files compared, differing: {diff or 'none'}")
