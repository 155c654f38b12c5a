"""Command-line entry point: ``sstnet <command> [flags]``.

Commands
    synth      write synthetic clean cubes
    simulate   add noise to clean cubes, with a NoiseRecord per cube
    train      fit a network on clean cubes (noise synthesised per step)
    denoise    run a checkpoint over noisy cubes (tiled)
    eval       PSNR / SSIM / SAM of test cubes against references
    gradcheck  finite-difference check of every differentiable component
    render     pseudo-colour PPM from three bands

Exit status
    0 success, 2 configuration error, 3 data or file-format error,
    4 numerical failure, 5 gradient check failed.
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import hsi
from .checkpoint import load_checkpoint
from .config import RunConfig
from .errors import ConfigError, ContractError, DataError, FormatError, NumericalError, ParameterError, ShapeError
from .metrics import MetricsReport, psnr
from .noise import NoiseRecord, NoiseSpec, apply_noise
from .plotting import plot_history, plot_metrics
from .rng import stream
from .train import denoise, make_val_pairs, train
from .verify import format_report, run_gradcheck

logger = logging.getLogger("sstnet")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 2, 3, 4, 5
CUBE_SUFFIXES = (".hsic", ".tcube")


# ---------------------------------------------------------------------------
# file helpers


def list_cubes(path):
    """Cube files under a directory (sorted by name), or the single file given."""
    p = Path(path)
    if p.is_dir():
        return sorted(q for q in p.iterdir() if q.suffix in CUBE_SUFFIXES and q.is_file())
    if p.is_file():
        return [p]
    raise DataError(f"no such file or directory: {p}")


def _write(cube, path):
    if Path(path).suffix == ".tcube":
        tmp = Path(path).with_name(Path(path).name + ".tmp")
        hsi.save_text_cube(cube, tmp)
        tmp.replace(path)
    else:
        hsi.save_cube(cube, path)


def _write_text(path, text):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _pairs(src, dst):
    """Map input cube(s) to output paths; a directory input needs a directory output."""
    files = list_cubes(src)
    if not files:
        raise DataError(f"no cube files ({', '.join(CUBE_SUFFIXES)}) in {src}")
    dst = Path(dst)
    if Path(src).is_dir() or dst.is_dir():
        dst.mkdir(parents=True, exist_ok=True)
        return [(f, dst / f.name) for f in files], True
    dst.parent.mkdir(parents=True, exist_ok=True)
    return [(files[0], dst)], False


def _to_unit(cube):
    return cube if cube.value_range == (0.0, 1.0) else hsi.normalize(cube)


def _need(run, *keys):
    missing = [k for k in keys if getattr(run, k) is None]
    if missing:
        raise ConfigError(f"{run.mode} needs --{', --'.join(missing)}")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(run, args):
    _need(run, "output")
    out = Path(run.output)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.count):
        cube = hsi.synthetic_cube(args.size, args.size, run.sst.bands, seed=run.train.seed * 100003 + i)
        _write(cube, out / f"synth_{i:04d}.hsic")
    print(f"wrote {args.count} cubes of {args.size}x{args.size}x{run.sst.bands} to {out}")
    return EXIT_OK


def cmd_simulate(run, args):
    """Noisy copy of every input cube plus ``<name>.noise.json`` and a readable ``<name>.noise.txt``.

    For a directory input each file gets its own seed derived from the run
    seed and the file name; a single file uses the run seed directly.
    """
    _need(run, "input", "output")
    pairs, many = _pairs(run.input, run.output)
    base = run.noise
    for src, dst in pairs:
        seed = int(stream(base.seed, "simulate", src.name).integers(2**31)) if many else base.seed
        spec = NoiseSpec(base.kind, base.sigma, base.affected_band_fraction, dict(base.kind_params), seed, base.clip)
        noisy, record = apply_noise(_to_unit(hsi.read_any(src)), spec)
        _write(noisy, dst)
        stem = dst.with_suffix("")
        _write_text(stem.with_name(stem.name + ".noise.json"), record.to_json() + "\n")
        _write_text(stem.with_name(stem.name + ".noise.txt"), spec.to_text() + record.summary() + "\n")
        print(f"{src.name}: {spec.kind} seed {seed} -> {dst}")
    return EXIT_OK


def _load_unit_cubes(path):
    return [_to_unit(hsi.read_any(f)) for f in list_cubes(path)]


def cmd_train(run, args):
    _need(run, "input", "checkpoint")
    cubes = _load_unit_cubes(run.input)
    if not cubes:
        raise DataError(f"no training cubes in {run.input}")
    vals = _load_unit_cubes(run.val) if run.val else []
    report_dir = Path(run.output) if run.output else None
    if report_dir is not None:
        report_dir.mkdir(parents=True, exist_ok=True)
        _write_text(report_dir / "config.txt", run.to_text())
    Path(run.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    print("epoch,lr,loss,val_psnr,steps")

    def log(rec):
        print(f"{rec['epoch']},{rec['lr']!r},{rec['loss']!r},{rec['val_psnr']!r},{rec['steps']}", flush=True)

    model, history = train(cubes, run.sst, run.train, run.noise, vals, run.checkpoint, callback=log)
    if report_dir is not None:
        rows = ["epoch,lr,loss,val_psnr,steps"]
        rows += [f"{h['epoch']},{h['lr']!r},{h['loss']!r},{h['val_psnr']!r},{h['steps']}" for h in history]
        _write_text(report_dir / "train_log.csv", "\n".join(rows) + "\n")
        noisy = None
        if vals:
            pairs = make_val_pairs(vals, run.noise, run.train.seed)
            noisy = float(np.mean([min(psnr(c, n), 100.0) for c, n in pairs]))
        plot_history(history, report_dir / "training.png", noisy_psnr=noisy)
    return EXIT_OK


def cmd_denoise(run, args):
    _need(run, "input", "output", "checkpoint")
    model, _ = load_checkpoint(run.checkpoint)
    for src, dst in _pairs(run.input, run.output)[0]:
        cube = hsi.read_any(src)
        out = denoise(model, cube.data, tile=run.tile, overlap=run.overlap)
        if not np.isfinite(out).all():
            raise NumericalError(f"{src.name}: network produced non-finite values")
        _write(hsi.HsiCube(out, cube.value_range), dst)
        print(f"{src.name} -> {dst}")
    return EXIT_OK


def _noise_kinds(test_files):
    kinds = set()
    for f in test_files:
        rec = f.with_name(f.name[: -len(f.suffix)] + ".noise.json")
        if rec.is_file():
            kinds.add(NoiseRecord.from_json(rec.read_text()).spec.kind)
    return ", ".join(sorted(kinds)) or "unknown"


def build_report(reference, test, workers=1, model_id=None):
    ref_files = {f.name: f for f in list_cubes(reference)}
    test_files = {f.name: f for f in list_cubes(test)}
    if Path(reference).is_file() and Path(test).is_file():
        test_files = {Path(reference).name: Path(test)}
    common = sorted(set(ref_files) & set(test_files))
    if not common:
        raise DataError(f"no matching cube names between {reference} and {test}")
    report = MetricsReport()
    for name in sorted(set(ref_files) ^ set(test_files)):
        side = "reference" if name in ref_files else "test"
        report.warnings.append(f"unmatched {side} file {name} skipped")

    def one(name):
        ref = _to_unit(hsi.read_any(ref_files[name])).data
        out = hsi.read_any(test_files[name]).data
        if ref.shape != out.shape:
            raise ShapeError(f"{name}: reference {ref.shape} vs test {out.shape}")
        return name, ref, out

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        for name, ref, out in pool.map(one, common):
            report.add(Path(name).stem, ref, out)
    report.metadata = {
        "reference": str(reference),
        "test": str(test),
        "noise": _noise_kinds([test_files[n] for n in common]),
        "model": model_id or "none",
    }
    return report


def cmd_eval(run, args):
    _need(run, "input", "reference")
    report = build_report(run.reference, run.input, run.workers, run.checkpoint)
    if args.timestamp:
        report.metadata["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    text = report.to_text()
    sys.stdout.write(text)
    if run.output:
        out = Path(run.output)
        out.mkdir(parents=True, exist_ok=True)
        _write_text(out / "metrics.txt", text)
        _write_text(out / "metrics.csv", report.to_csv())
        plot_metrics(report, out / "metrics.png")
    if report.warnings:
        logger.warning("%d warning(s): %s", len(report.warnings), "; ".join(report.warnings))
    return EXIT_OK


def cmd_gradcheck(run, args):
    checks = run_gradcheck(run.sst, args.size, args.size, eps=args.eps, seed=run.train.seed)
    text, ok = format_report(checks)
    sys.stdout.write(text)
    if run.output:
        _write_text(run.output, text)
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_render(run, args):
    _need(run, "input", "output")
    cube = _to_unit(hsi.read_any(run.input))
    hsi.write_ppm(hsi.pseudo_color(cube, run.band_triplet), run.output)
    print(f"bands {run.band_triplet} -> {run.output}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "render": cmd_render,
}

# flag -> config key
_FLAG_KEYS = {
    "input": "input", "output": "output", "checkpoint": "checkpoint", "reference": "reference",
    "val": "val", "sigma": "sigma", "noise_kind": "noise_kind", "seed": "seed", "bands": "bands",
    "channels": "channels", "rssb": "rssb", "sstl": "sstl", "heads": "heads", "window": "window",
    "attention_order": "attention_order", "loss": "loss", "epochs": "epochs", "batch": "batch",
    "lr": "lr", "max_steps": "max_steps", "patch": "patch", "tile": "tile", "overlap": "overlap",
    "band_triplet": "band_triplet", "preset": "preset", "workers": "workers",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="sstnet", description="Hyperspectral denoising toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMANDS[name].__doc__ and COMMANDS[name].__doc__.splitlines()[0])
        p.add_argument("--config", help="flat key = value config file (flags win)")
        p.add_argument("--input")
        p.add_argument("--output")
        p.add_argument("--checkpoint")
        p.add_argument("--reference", help="eval: directory or file of clean cubes")
        p.add_argument("--val", help="train: directory of clean validation cubes")
        p.add_argument("--sigma", help="noise level on the 0-255 scale, or 'lo,hi'")
        p.add_argument("--noise-kind", dest="noise_kind")
        p.add_argument("--seed", type=int)
        p.add_argument("--preset", choices=("desk", "full"))
        for key in ("bands", "channels", "rssb", "sstl", "heads", "window", "epochs", "batch",
                    "max_steps", "patch", "tile", "overlap", "workers"):
            p.add_argument("--" + key.replace("_", "-"), dest=key, type=int)
        p.add_argument("--attention-order", dest="attention_order")
        p.add_argument("--loss", choices=("mse", "l1"))
        p.add_argument("--lr", type=float)
        p.add_argument("--band-triplet", dest="band_triplet", help="three 0-based band indices, e.g. 9,15,28")
        if name == "synth":
            p.add_argument("--count", type=int, default=8)
            p.add_argument("--size", type=int, default=64)
        if name == "gradcheck":
            p.add_argument("--size", type=int, default=8, help="spatial size of the test input")
            p.add_argument("--eps", type=float, default=1e-5)
        if name == "eval":
            p.add_argument("--timestamp", action="store_true", help="record the wall-clock time in the report")
    return parser


def _overrides(args):
    ov = {key: getattr(args, flag, None) for flag, key in _FLAG_KEYS.items()}
    if args.command == "gradcheck":
        ov["preset"] = ov["preset"] or "desk"
        if ov.get("bands") is None and args.config is None:
            ov["bands"] = 4
    return ov


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        run = RunConfig.load(args.config, _overrides(args), mode=args.command)
        return COMMANDS[args.command](run, args)
    except (ConfigError, ParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError, ShapeError, ContractError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
