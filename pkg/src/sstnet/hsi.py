"""Hyperspectral cubes: binary/text I/O, normalisation, cropping, patching, rendering.

Cubes are held in memory as ``H x W x B`` float32 arrays (channel last, the
layout the network consumes). On disk the payload is band-planar.

Binary layout (all little-endian)::

    offset  size  field
    0       4     magic b"HSIC"
    4       4     u32 format version (1)
    8       12    u32 height, width, bands
    20      4     u32 dtype tag (1 = float32)
    24      16    f64 value_range min, max
    40      4*HWB float32 payload, band-planar row-major (band, row, col)
"""

import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ParameterError, ShapeError
from .rng import stream

logger = logging.getLogger(__name__)

MAGIC = b"HSIC"
VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sIIIIIdd")

DEFAULT_TRIPLET = (9, 15, 28)


@dataclass
class HsiCube:
    data: np.ndarray
    value_range: tuple = (0.0, 1.0)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"HsiCube needs a non-empty H x W x B array, got shape {arr.shape}")
        self.data = np.ascontiguousarray(arr, dtype=np.float32)
        self.value_range = (float(self.value_range[0]), float(self.value_range[1]))

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def bands(self):
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def copy(self):
        return HsiCube(self.data.copy(), self.value_range)


@dataclass
class PatchSet:
    patches: list
    source_id: str
    extraction_params: dict
    skipped: list = field(default_factory=list)

    def __len__(self):
        return len(self.patches)

    def stack(self):
        """All patches as one ``n x p x p x B`` array."""
        if not self.patches:
            return np.zeros((0, 0, 0, 0), dtype=np.float32)
        return np.stack([p.data for p in self.patches])


# ---------------------------------------------------------------------------
# I/O


def save_cube(cube, path):
    """Write ``cube`` atomically (temporary file, then rename)."""
    path = Path(path)
    header = _HEADER.pack(MAGIC, VERSION, cube.height, cube.width, cube.bands, DTYPE_F32, *cube.value_range)
    payload = np.ascontiguousarray(cube.data.transpose(2, 0, 1), dtype="<f4").tobytes()
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    os.replace(tmp, path)


def load_cube(path):
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: header truncated, {len(raw)} of {_HEADER.size} bytes", offset=len(raw))
    magic, version, h, w, b, tag, vmin, vmax = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}", offset=4)
    if min(h, w, b) < 1:
        raise FormatError(f"{path}: empty dimensions {h}x{w}x{b}", offset=8)
    if tag != DTYPE_F32:
        raise FormatError(f"{path}: unknown dtype tag {tag}", offset=20)
    need = _HEADER.size + 4 * h * w * b
    if len(raw) != need:
        what = "truncated" if len(raw) < need else "has trailing bytes"
        raise FormatError(f"{path}: payload {what}: expected {need} bytes, found {len(raw)}", offset=min(len(raw), need))
    planar = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(b, h, w)
    return HsiCube(planar.transpose(1, 2, 0), (vmin, vmax))


def load_text_cube(path):
    """Read the plain-text interchange form.

    First non-comment line: ``H W B [min max]``; then ``H*W*B`` numbers,
    band-planar, separated by any whitespace.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise FormatError(f"{path}: empty text cube", offset=0)
    head = lines[0].split()
    if len(head) not in (3, 5):
        raise FormatError(f"{path}: header must be 'H W B [min max]', got {lines[0]!r}", offset=0)
    try:
        h, w, b = (int(v) for v in head[:3])
        vr = (float(head[3]), float(head[4])) if len(head) == 5 else None
        values = np.array(" ".join(lines[1:]).split(), dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}", offset=0) from None
    if values.size != h * w * b:
        raise FormatError(f"{path}: expected {h * w * b} values, found {values.size}", offset=0)
    data = values.reshape(b, h, w).transpose(1, 2, 0)
    if vr is None:
        vr = (float(values.min()), float(values.max()))
    return HsiCube(data, vr)


def save_text_cube(cube, path):
    planar = cube.data.transpose(2, 0, 1).reshape(cube.bands, -1)
    with open(path, "w") as fh:
        fh.write(f"{cube.height} {cube.width} {cube.bands} {cube.value_range[0]!r} {cube.value_range[1]!r}\n")
        for row in planar:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_any(path):
    return load_text_cube(path) if str(path).endswith((".txt", ".tcube")) else load_cube(path)


# ---------------------------------------------------------------------------
# preprocessing


def normalize(cube):
    """Affinely map ``value_range`` onto [0, 1]."""
    lo, hi = cube.value_range
    if not hi > lo:
        raise ParameterError(f"normalize: degenerate value range {cube.value_range}")
    if (lo, hi) == (0.0, 1.0):
        return cube.copy()
    data = (cube.data.astype(np.float64) - lo) / (hi - lo)
    return HsiCube(np.clip(data, 0.0, 1.0), (0.0, 1.0))


def center_crop(cube, h, w):
    """Spatially centred crop; an odd remainder puts the extra pixel bottom/right."""
    if h < 1 or w < 1 or h > cube.height or w > cube.width:
        raise ParameterError(f"center_crop: {h}x{w} does not fit in {cube.height}x{cube.width}")
    top = (cube.height - h) // 2
    left = (cube.width - w) // 2
    return HsiCube(cube.data[top:top + h, left:left + w].copy(), cube.value_range)


def _resize_matrix(n_in, n_out):
    # bilinear weights with half-pixel centres, edge-clamped
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        i0 = int(math.floor(src))
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[i, i0] += 1.0 - frac
        m[i, i1] += frac
    return m


def resize_bilinear(data, out_h, out_w):
    """Bilinear resampling of the two spatial axes of an ``H x W x B`` array."""
    h, w = data.shape[:2]
    if (out_h, out_w) == (h, w):
        return data.copy()
    rm = _resize_matrix(h, out_h)
    cm = _resize_matrix(w, out_w)
    out = np.einsum("ih,hwb->iwb", rm, data.astype(np.float64))
    return np.einsum("jw,iwb->ijb", cm, out)


def patch_count(dim, patch, stride):
    return 0 if dim < patch else (dim - patch) // stride + 1


def extract_patches(cube, patch=64, scales=(1.0, 0.5, 0.25), strides=(64, 32, 32), source_id=""):
    """Tile ``cube`` at several spatial scales.

    At scale ``s`` the cube is bilinearly resized to ``floor(H*s) x floor(W*s)``
    and cut into ``patch x patch`` tiles with the matching stride. Ordering is
    scale-major, then row-major. Scales too small for one patch are skipped
    and noted in ``PatchSet.skipped``.
    """
    if len(scales) != len(strides):
        raise ParameterError(f"extract_patches: {len(scales)} scales but {len(strides)} strides")
    patches = []
    skipped = []
    for s, stride in zip(scales, strides):
        if stride < 1 or s <= 0:
            raise ParameterError(f"extract_patches: invalid scale {s} / stride {stride}")
        h, w = int(math.floor(cube.height * s + 1e-9)), int(math.floor(cube.width * s + 1e-9))
        if h < patch or w < patch:
            msg = f"scale {s}: {h}x{w} is smaller than patch {patch}"
            logger.warning("extract_patches(%s): %s, skipped", source_id, msg)
            skipped.append(msg)
            continue
        data = cube.data if (h, w) == (cube.height, cube.width) else resize_bilinear(cube.data, h, w)
        for r in range(patch_count(h, patch, stride)):
            for c in range(patch_count(w, patch, stride)):
                y, x = r * stride, c * stride
                patches.append(HsiCube(data[y:y + patch, x:x + patch], cube.value_range))
    params = {"patch": patch, "scales": list(scales), "strides": list(strides)}
    return PatchSet(patches, source_id, params, skipped)


# ---------------------------------------------------------------------------
# rendering


def pseudo_color(cube, band_triplet=DEFAULT_TRIPLET):
    """8-bit RGB image from three bands (0-based indices) clipped to [0, 1]."""
    for b in band_triplet:
        if not 0 <= b < cube.bands:
            raise ParameterError(f"pseudo_color: band {b} out of range for {cube.bands} bands")
    rgb = np.clip(cube.data[:, :, list(band_triplet)].astype(np.float64), 0.0, 1.0)
    return np.round(rgb * 255.0).astype(np.uint8)


def write_ppm(rgb, path):
    """Binary PPM (P6), written atomically."""
    path = Path(path)
    h, w, _ = rgb.shape
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())
    os.replace(tmp, path)


def read_ppm(path):
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError(f"{path}: truncated PPM header", offset=pos)
        fields.append(raw[start:pos])
    if fields[0] != b"P6":
        raise FormatError(f"{path}: not a binary PPM", offset=0)
    w, h = int(fields[1]), int(fields[2])
    body = raw[pos + 1:]
    if len(body) != h * w * 3:
        raise FormatError(f"{path}: expected {h * w * 3} pixel bytes, found {len(body)}", offset=pos + 1)
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# synthetic data


def synthetic_cube(height, width, bands, seed, endmembers=3):
    """A smooth, spectrally low-rank cube in [0, 1] for tests and smoke training.

    Abundance maps are low-frequency random Fourier fields passed through a
    softmax; spectra are smooth bumps over the band axis.
    """
    rng = stream(seed, "synthetic")
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    logits = np.zeros((height, width, endmembers))
    for k in range(endmembers):
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            logits[:, :, k] += rng.normal() * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    ab = np.exp(2.0 * logits)
    ab /= ab.sum(axis=-1, keepdims=True)
    t = np.linspace(0, 1, bands)
    spectra = np.zeros((endmembers, bands))
    for k in range(endmembers):
        centre, width_ = rng.uniform(0, 1), rng.uniform(0.2, 0.6)
        spectra[k] = 0.15 + 0.7 * rng.uniform(0.4, 1.0) * np.exp(-0.5 * ((t - centre) / width_) ** 2)
    return HsiCube(ab @ spectra, (0.0, 1.0))
