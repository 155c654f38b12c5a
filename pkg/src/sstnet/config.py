"""Run configuration: one flat ``key = value`` file, overridable by flags.

Keys are routed by name to the network (:class:`SstConfig`), the noise
(:class:`NoiseSpec`) or the optimisation (:class:`TrainConfig`) settings;
the remaining keys belong to the run itself. ``seed`` is shared by the noise
and the training loop. Ranges are written ``lo, hi``. ``#`` starts a comment.

Documented keys::

    # network
    bands channels rssb sstl heads window mlp_ratio attention_order
    shift_mask ln_eps input_offset
    # noise
    noise_kind sigma affected_band_fraction column_fraction deadline_width
    impulse_ratio stripe_offset clip
    # training
    batch epochs lr lr_drop_epoch lr_divisor seed loss patch scales strides
    crop max_steps
    # run (``preset = desk | full`` picks the network defaults before overrides)
    preset input output checkpoint reference val report tile overlap band_triplet
    workers
"""

from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, SstError
from .hsi import DEFAULT_TRIPLET
from .noise import DEFAULT_KIND_PARAMS, NoiseSpec
from .sst import SstConfig
from .train import TrainConfig

PRESETS = {"desk": SstConfig.desk, "full": SstConfig.full_scale}
MODES = ("simulate", "train", "denoise", "eval", "gradcheck", "render", "synth")

SST_KEYS = tuple(f.name for f in fields(SstConfig))
TRAIN_KEYS = tuple(f.name for f in fields(TrainConfig))
NOISE_KEYS = ("noise_kind", "sigma", "affected_band_fraction", "clip") + tuple(DEFAULT_KIND_PARAMS)
RUN_KEYS = ("preset", "input", "output", "checkpoint", "reference", "val", "report", "tile", "overlap", "band_triplet", "workers")


def parse_text(text):
    """``key = value`` lines to a dict of raw strings."""
    kv = {}
    for n, ln in enumerate(text.splitlines(), 1):
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        if "=" not in ln:
            raise ConfigError(f"line {n}: expected 'key = value', got {ln!r}")
        k, v = (s.strip() for s in ln.split("=", 1))
        if not k:
            raise ConfigError(f"line {n}: empty key")
        kv[k.replace("-", "_")] = v
    return kv


def _floats(v):
    if isinstance(v, (tuple, list)):
        return tuple(float(x) for x in v)
    return tuple(float(x) for x in str(v).split(","))


def _ints(v):
    if isinstance(v, (tuple, list)):
        return tuple(int(x) for x in v)
    return tuple(int(x) for x in str(v).split(","))


def _bool(v):
    return v if isinstance(v, bool) else str(v).strip().lower() in ("1", "true", "yes", "on")


@dataclass
class RunConfig:
    mode: str = "gradcheck"
    input: str = None
    output: str = None
    checkpoint: str = None
    reference: str = None
    val: str = None
    report: str = None
    sst: SstConfig = field(default_factory=SstConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    tile: int = 64
    overlap: int = 16
    band_triplet: tuple = DEFAULT_TRIPLET
    workers: int = 1

    @classmethod
    def from_mapping(cls, kv, mode="gradcheck"):
        """Build from a flat mapping; values may be strings or already typed."""
        kv = {k.replace("-", "_"): v for k, v in kv.items() if v is not None}
        unknown = set(kv) - set(SST_KEYS) - set(TRAIN_KEYS) - set(NOISE_KEYS) - set(RUN_KEYS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            base = {}
            if "preset" in kv:
                if kv["preset"] not in PRESETS:
                    raise ConfigError(f"unknown preset {kv['preset']!r}; choose from {sorted(PRESETS)}")
                preset = PRESETS[kv["preset"]]()
                base = {f.name: getattr(preset, f.name) for f in fields(preset)}
            base.update({k: kv[k] for k in SST_KEYS if k in kv})
            sst = SstConfig.from_mapping(base)
            train = _train_from(kv)
            noise = _noise_from(kv)
            run = cls(mode=mode, sst=sst, noise=noise, train=train)
            for k in ("input", "output", "checkpoint", "reference", "val", "report"):
                if k in kv:
                    setattr(run, k, str(kv[k]))
            for k in ("tile", "overlap", "workers"):
                if k in kv:
                    setattr(run, k, int(kv[k]))
            if "band_triplet" in kv:
                run.band_triplet = _ints(kv["band_triplet"])
        except ConfigError:
            raise
        except (SstError, ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        if len(run.band_triplet) != 3:
            raise ConfigError(f"band_triplet needs three bands, got {run.band_triplet}")
        if run.tile < 0 or run.overlap < 0 or (run.tile and run.overlap >= run.tile):
            raise ConfigError(f"need 0 <= overlap < tile, got tile={run.tile} overlap={run.overlap}")
        return run

    @classmethod
    def load(cls, path=None, overrides=None, mode="gradcheck"):
        """File values first, then ``overrides`` (flags win)."""
        kv = {}
        if path is not None:
            p = Path(path)
            if not p.is_file():
                raise ConfigError(f"config file not found: {p}")
            kv.update(parse_text(p.read_text()))
        kv.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(kv, mode)

    def to_text(self):
        """Flat text that :meth:`load` reads back to an equal config."""
        lines = [f"# mode: {self.mode}"]
        for k in ("input", "output", "checkpoint", "reference", "val", "report"):
            if getattr(self, k) is not None:
                lines.append(f"{k} = {getattr(self, k)}")
        lines += [f"tile = {self.tile}", f"overlap = {self.overlap}", f"workers = {self.workers}"]
        lines.append("band_triplet = " + ", ".join(str(b) for b in self.band_triplet))
        lines.append(self.sst.to_text().rstrip("\n"))
        for ln in self.noise.to_text().splitlines():
            if ln.startswith("kind ="):
                ln = "noise_" + ln
            if not ln.startswith("seed ="):
                lines.append(ln)
        t = self.train
        for f in fields(t):
            v = getattr(t, f.name)
            if isinstance(v, tuple):
                v = ", ".join(repr(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _train_from(kv):
    args = {}
    for f in fields(TrainConfig):
        if f.name not in kv:
            continue
        v = kv[f.name]
        if f.name == "scales":
            args[f.name] = _floats(v)
        elif f.name == "strides":
            args[f.name] = _ints(v)
        elif f.name in ("lr", "lr_divisor"):
            args[f.name] = float(v)
        elif f.name == "loss":
            args[f.name] = str(v)
        else:
            args[f.name] = int(v)
    return TrainConfig(**args)


def _noise_from(kv):
    args = {"seed": int(kv.get("seed", 0))}
    if "noise_kind" in kv:
        args["kind"] = str(kv["noise_kind"])
    if "sigma" in kv:
        s = _floats(kv["sigma"])
        args["sigma"] = s[0] if len(s) == 1 else s
    if "affected_band_fraction" in kv:
        args["affected_band_fraction"] = float(kv["affected_band_fraction"])
    if "clip" in kv:
        args["clip"] = _bool(kv["clip"])
    args["kind_params"] = {k: _floats(kv[k]) for k in DEFAULT_KIND_PARAMS if k in kv}
    return NoiseSpec(**args)
