"""Synthetic degradations ``Y = X + eta`` for hyperspectral cubes.

Noise levels ``sigma`` are given on the 0-255 intensity scale and applied to
[0, 1] data as ``sigma / 255``. Each call draws from sub-streams of one seed:
the Gaussian field, the per-band sigmas, and each structured corruption have
their own stream. A deadline/impulse/stripe cube therefore contains exactly
the same Gaussian realisation as :func:`add_gaussian_noniid` with the same
seed, and a :class:`NoiseRecord` plus the seed reproduce the output exactly.
"""

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError
from .hsi import HsiCube
from .rng import stream

KINDS = ("gaussian_iid", "gaussian_noniid", "deadline", "impulse", "stripe", "mixture")
STRUCTURED = ("deadline", "impulse", "stripe")

DEFAULT_KIND_PARAMS = {
    "column_fraction": (0.05, 0.15),
    "deadline_width": (1, 3),
    "impulse_ratio": (0.1, 0.7),
    "stripe_offset": (-0.25, 0.25),
}


@dataclass
class NoiseSpec:
    kind: str = "gaussian_iid"
    sigma: object = 50.0
    affected_band_fraction: float = 1.0 / 3.0
    kind_params: dict = field(default_factory=dict)
    seed: int = 0
    clip: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown noise kind {self.kind!r}; expected one of {KINDS}")
        if isinstance(self.sigma, (list, tuple)):
            lo, hi = (float(v) for v in self.sigma)
            if not (0 < lo < hi):
                raise ParameterError(f"sigma range must satisfy 0 < min < max, got {self.sigma}")
            self.sigma = (lo, hi)
        else:
            self.sigma = float(self.sigma)
            if not self.sigma > 0:
                raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not 0.0 <= self.affected_band_fraction <= 1.0:
            raise ParameterError(f"affected_band_fraction must lie in [0, 1], got {self.affected_band_fraction}")
        unknown = set(self.kind_params) - set(DEFAULT_KIND_PARAMS)
        if unknown:
            raise ParameterError(f"unknown kind_params {sorted(unknown)}")
        # entries equal to the default are dropped so equal settings compare equal
        kp = {k: tuple(float(x) for x in v) for k, v in self.kind_params.items()}
        self.kind_params = {k: v for k, v in kp.items() if v != tuple(map(float, DEFAULT_KIND_PARAMS[k]))}
        self.seed = int(self.seed)

    def param(self, key):
        return self.kind_params.get(key, DEFAULT_KIND_PARAMS[key])

    @property
    def sigma_range(self):
        # a scalar sigma pins every band to that level
        return self.sigma if isinstance(self.sigma, tuple) else (self.sigma, self.sigma)

    def to_text(self):
        lines = [f"kind = {self.kind}"]
        if isinstance(self.sigma, tuple):
            lines.append(f"sigma = {self.sigma[0]!r}, {self.sigma[1]!r}")
        else:
            lines.append(f"sigma = {self.sigma!r}")
        lines.append(f"affected_band_fraction = {self.affected_band_fraction!r}")
        for key in DEFAULT_KIND_PARAMS:
            lo, hi = self.param(key)
            lines.append(f"{key} = {lo!r}, {hi!r}")
        lines.append(f"seed = {self.seed}")
        lines.append(f"clip = {str(self.clip).lower()}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = {}
        for ln in text.splitlines():
            ln = ln.split("#", 1)[0].strip()
            if not ln:
                continue
            if "=" not in ln:
                raise ConfigError(f"noise spec line without '=': {ln!r}")
            k, v = (s.strip() for s in ln.split("=", 1))
            kv[k] = v
        try:
            sigma = [float(s) for s in kv.pop("sigma", "50").split(",")]
            kp = {}
            for key in DEFAULT_KIND_PARAMS:
                if key in kv:
                    kp[key] = tuple(float(s) for s in kv.pop(key).split(","))
            spec = cls(
                kind=kv.pop("kind", "gaussian_iid"),
                sigma=sigma[0] if len(sigma) == 1 else tuple(sigma),
                affected_band_fraction=float(kv.pop("affected_band_fraction", 1.0 / 3.0)),
                kind_params=kp,
                seed=int(kv.pop("seed", 0)),
                clip=kv.pop("clip", "false").lower() in ("1", "true", "yes"),
            )
        except ValueError as exc:
            raise ConfigError(f"bad noise spec: {exc}") from None
        if kv:
            raise ConfigError(f"unknown noise spec keys {sorted(kv)}")
        return spec


@dataclass
class NoiseRecord:
    """Everything needed, together with the seed, to rebuild one realisation."""

    spec: NoiseSpec
    per_band_sigma: list
    affected_bands: dict = field(default_factory=dict)
    deadline_columns: dict = field(default_factory=dict)
    stripe_columns: dict = field(default_factory=dict)
    impulse_pixels: dict = field(default_factory=dict)
    band_kinds: list = None

    def to_json(self):
        d = asdict(self)
        d["spec"]["sigma"] = list(self.spec.sigma) if isinstance(self.spec.sigma, tuple) else self.spec.sigma
        return json.dumps(d, indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        spec = d.pop("spec")
        if isinstance(spec["sigma"], list):
            spec["sigma"] = tuple(spec["sigma"])
        rec = cls(spec=NoiseSpec(**spec), **d)
        rec.deadline_columns = {int(k): v for k, v in rec.deadline_columns.items()}
        rec.stripe_columns = {int(k): v for k, v in rec.stripe_columns.items()}
        rec.impulse_pixels = {int(k): v for k, v in rec.impulse_pixels.items()}
        return rec

    def summary(self):
        lines = [f"kind: {self.spec.kind}", f"seed: {self.spec.seed}"]
        lines.append("per-band sigma (0-255): " + ", ".join(f"{s:.3f}" for s in self.per_band_sigma))
        for kind in STRUCTURED:
            if kind in self.affected_bands:
                lines.append(f"{kind} bands: {self.affected_bands[kind]}")
        if self.band_kinds is not None:
            for b, k in enumerate(self.band_kinds):
                lines.append(f"band {b}: {k}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# building blocks


def _affected_count(fraction, bands):
    return min(bands, math.ceil(fraction * bands - 1e-9))


def _column_count(rng, width, frac_range):
    lo = math.ceil(frac_range[0] * width - 1e-9)
    hi = max(lo, math.floor(frac_range[1] * width + 1e-9))
    return int(rng.integers(lo, hi + 1)) if hi > 0 else 0


def gaussian_field(shape, per_band_sigma, seed):
    """The Gaussian part of the noise, ``N(0, (sigma_b/255)^2)`` per band."""
    sig = np.asarray(per_band_sigma, dtype=np.float64) / 255.0
    return stream(seed, "gauss").standard_normal(shape) * sig[None, None, :]


def _deadline_columns(rng, width, spec):
    """Non-overlapping runs of 1-3 columns covering at least the target count."""
    target = _column_count(rng, width, spec.param("column_fraction"))
    wmin, wmax = (int(v) for v in spec.param("deadline_width"))
    free = np.ones(width, dtype=bool)
    total = 0
    while total < target:
        run = int(rng.integers(wmin, wmax + 1))
        while run >= 1:
            starts = [s for s in range(width - run + 1) if free[s:s + run].all()]
            if starts:
                break
            run -= 1
        if run < 1:
            break
        s = starts[int(rng.integers(len(starts)))]
        free[s:s + run] = False
        total += run
    return np.flatnonzero(~free).tolist()


def _apply_deadline(data, band, rng, spec, record):
    cols = _deadline_columns(rng, data.shape[1], spec)
    data[:, cols, band] = 0.0
    record.deadline_columns[band] = cols


def _apply_impulse(data, band, rng, spec, record):
    h, w = data.shape[:2]
    lo, hi = spec.param("impulse_ratio")
    ratio = float(rng.uniform(lo, hi)) if hi > lo else float(lo)
    n = int(round(ratio * h * w))
    pix = np.sort(rng.choice(h * w, size=n, replace=False)) if n else np.zeros(0, dtype=np.int64)
    vals = (rng.random(n) < 0.5).astype(np.float64)
    plane = data[:, :, band].reshape(-1)
    plane[pix] = vals
    data[:, :, band] = plane.reshape(h, w)
    record.impulse_pixels[band] = {"ratio": ratio, "pixels": pix.tolist(), "values": vals.tolist()}


def _apply_stripe(data, band, rng, spec, record):
    w = data.shape[1]
    n = _column_count(rng, w, spec.param("column_fraction"))
    cols = np.sort(rng.choice(w, size=n, replace=False))
    lo, hi = spec.param("stripe_offset")
    offs = rng.uniform(lo, hi, size=n) if hi > lo else np.full(n, float(lo))
    data[:, cols, band] += offs[None, :]
    record.stripe_columns[band] = [[int(c), float(o)] for c, o in zip(cols, offs)]


_APPLY = {"deadline": _apply_deadline, "impulse": _apply_impulse, "stripe": _apply_stripe}


def _noniid_sigmas(bands, sigma_range, seed):
    lo, hi = sigma_range
    if not (0 < lo <= hi):
        raise ParameterError(f"sigma range must satisfy 0 < min <= max, got {sigma_range}")
    if lo == hi:
        return [float(lo)] * bands
    return stream(seed, "sigma").uniform(lo, hi, size=bands).tolist()


def _finish(clean, noisy, spec):
    if spec.clip:
        noisy = np.clip(noisy, 0.0, 1.0)
    return HsiCube(noisy, clean.value_range)


def _gaussian_base(cube, spec, sigmas):
    return cube.data.astype(np.float64) + gaussian_field(cube.shape, sigmas, spec.seed)


# ---------------------------------------------------------------------------
# public operations


def add_gaussian_iid(cube, sigma, seed, clip=False):
    """Same-level Gaussian noise on every band; no clipping by default."""
    spec = NoiseSpec("gaussian_iid", sigma, seed=seed, clip=clip)
    sigmas = [spec.sigma] * cube.bands
    rec = NoiseRecord(spec, sigmas)
    return _finish(cube, _gaussian_base(cube, spec, sigmas), spec), rec


def add_gaussian_noniid(cube, sigma_range=(10.0, 70.0), seed=0, clip=False):
    """Per-band sigma drawn uniformly from ``sigma_range``."""
    sigmas = _noniid_sigmas(cube.bands, sigma_range, seed)
    lo, hi = sigma_range
    spec = NoiseSpec("gaussian_noniid", (lo, hi) if hi > lo else lo, seed=seed, clip=clip)
    rec = NoiseRecord(spec, sigmas)
    return _finish(cube, _gaussian_base(cube, spec, sigmas), spec), rec


def _structured(cube, spec, kind):
    sigmas = _noniid_sigmas(cube.bands, spec.sigma_range, spec.seed)
    rec = NoiseRecord(spec, sigmas)
    data = _gaussian_base(cube, spec, sigmas)
    rng = stream(spec.seed, kind)
    n = _affected_count(spec.affected_band_fraction, cube.bands)
    bands = sorted(int(b) for b in rng.choice(cube.bands, size=n, replace=False)) if n else []
    rec.affected_bands[kind] = bands
    for b in bands:
        _APPLY[kind](data, b, rng, spec, rec)
    return _finish(cube, data, spec), rec


def _resolve(spec, kind, seed):
    if spec is None:
        spec = NoiseSpec(kind, (10.0, 70.0))
    if spec.kind != kind:
        spec = NoiseSpec(kind, spec.sigma, spec.affected_band_fraction, dict(spec.kind_params), spec.seed, spec.clip)
    if seed is not None:
        spec.seed = int(seed)
    return spec


def add_deadline(cube, spec=None, seed=None):
    """Non-i.i.d Gaussian, then zeroed column runs on a fraction of bands."""
    return _structured(cube, _resolve(spec, "deadline", seed), "deadline")


def add_impulse(cube, spec=None, seed=None):
    """Non-i.i.d Gaussian, then salt-and-pepper pixels on a fraction of bands."""
    return _structured(cube, _resolve(spec, "impulse", seed), "impulse")


def add_stripe(cube, spec=None, seed=None):
    """Non-i.i.d Gaussian, then constant column offsets on a fraction of bands."""
    return _structured(cube, _resolve(spec, "stripe", seed), "stripe")


def add_mixture(cube, seed=None, spec=None):
    """Non-i.i.d Gaussian everywhere; each band then gets one of nothing/deadline/impulse/stripe."""
    spec = _resolve(spec, "mixture", seed)
    sigmas = _noniid_sigmas(cube.bands, spec.sigma_range, spec.seed)
    rec = NoiseRecord(spec, sigmas, band_kinds=[])
    data = _gaussian_base(cube, spec, sigmas)
    choice = stream(spec.seed, "mixture").integers(0, 4, size=cube.bands)
    options = ("none",) + STRUCTURED
    rec.band_kinds = [options[c] for c in choice]
    rngs = {k: stream(spec.seed, k) for k in STRUCTURED}
    for kind in STRUCTURED:
        rec.affected_bands[kind] = [b for b, k in enumerate(rec.band_kinds) if k == kind]
    for b, kind in enumerate(rec.band_kinds):
        if kind != "none":
            _APPLY[kind](data, b, rngs[kind], spec, rec)
    return _finish(cube, data, spec), rec


def apply_noise(cube, spec):
    """Dispatch on ``spec.kind``."""
    if spec.kind == "gaussian_iid":
        if isinstance(spec.sigma, tuple):
            raise ParameterError("gaussian_iid needs a single sigma, not a range")
        return add_gaussian_iid(cube, spec.sigma, spec.seed, spec.clip)
    if spec.kind == "gaussian_noniid":
        return add_gaussian_noniid(cube, spec.sigma_range, spec.seed, spec.clip)
    if spec.kind == "mixture":
        return add_mixture(cube, spec=spec)
    return _structured(cube, spec, spec.kind)


def realize(clean, record):
    """Rebuild the noisy cube from ``clean`` and a record (uses the stored seed)."""
    spec = record.spec
    data = clean.data.astype(np.float64) + gaussian_field(clean.shape, record.per_band_sigma, spec.seed)
    for b, cols in record.deadline_columns.items():
        data[:, cols, b] = 0.0
    for b, imp in record.impulse_pixels.items():
        plane = data[:, :, b].reshape(-1)
        plane[np.asarray(imp["pixels"], dtype=np.int64)] = imp["values"]
        data[:, :, b] = plane.reshape(clean.height, clean.width)
    for b, pairs in record.stripe_columns.items():
        for c, off in pairs:
            data[:, c, b] += off
    return _finish(clean, data, spec)
