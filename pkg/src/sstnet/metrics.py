"""PSNR, SSIM and SAM for hyperspectral cubes, plus report aggregation.

PSNR and SSIM are computed band by band (peak / dynamic range 1.0) and
averaged over bands. SAM is the mean per-pixel spectral angle in degrees.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ShapeError

PSNR_CAP = 100.0

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _as_array(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _pair(ref, test):
    a, b = _as_array(ref), _as_array(test)
    if a.shape != b.shape:
        raise ShapeError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    return a, b


def band_psnr(ref, test):
    a, b = _pair(ref, test)
    mse = ((a - b) ** 2).mean(axis=(0, 1))
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(1.0 / mse)


def psnr(ref, test):
    """Band-averaged PSNR in dB; ``inf`` when the cubes are identical."""
    return float(band_psnr(ref, test).mean())


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    """Normalised 1-D Gaussian taps; the 2-D window is their outer product."""
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def _filter_valid(img, taps):
    # separable 'valid' correlation over the first two axes
    k = taps.size
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ taps
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ taps


def ssim_map(ref, test, data_range=1.0):
    """Local SSIM over every fully-contained 11x11 window, per band."""
    a, b = _pair(ref, test)
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ShapeError(f"ssim needs spatial size >= {SSIM_WINDOW}, got {a.shape[:2]}")
    taps = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _filter_valid(a, taps)
    mu_b = _filter_valid(b, taps)
    var_a = _filter_valid(a * a, taps) - mu_a * mu_a
    var_b = _filter_valid(b * b, taps) - mu_b * mu_b
    cov = _filter_valid(a * b, taps) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(ref, test):
    """Band-averaged SSIM (Gaussian 11x11, sigma 1.5, K1=0.01, K2=0.03, range 1)."""
    return float(ssim_map(ref, test).mean(axis=(0, 1)).mean())


def spectral_angles(ref, test):
    """Per-pixel spectral angle in radians; NaN where either spectrum is zero.

    Uses ``2 * atan2(|u - v|, |u + v|)`` on the unit spectra, which equals
    ``arccos(<x, y> / (|x| |y|))`` but stays accurate near 0 and 180 degrees.
    """
    a, b = _pair(ref, test)
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    nb = np.linalg.norm(b, axis=-1, keepdims=True)
    valid = (na[..., 0] > 0) & (nb[..., 0] > 0)
    with np.errstate(invalid="ignore", divide="ignore"):
        u = a / na
        v = b / nb
        ang = 2.0 * np.arctan2(np.linalg.norm(u - v, axis=-1), np.linalg.norm(u + v, axis=-1))
    return np.where(valid, ang, np.nan)


def sam(ref, test, return_skipped=False):
    """Mean spectral angle in degrees over pixels where both spectra are non-zero."""
    ang = spectral_angles(ref, test)
    ok = ~np.isnan(ang)
    skipped = int(ang.size - ok.sum())
    if not ok.any():
        raise ContractError("sam: every pixel has a zero spectrum; metric undefined")
    val = float(np.degrees(ang[ok].mean()))
    return (val, skipped) if return_skipped else val


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricsReport:
    per_cube: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def add(self, cube_id, ref, test):
        self.per_cube.append((cube_id, psnr(ref, test), ssim(ref, test), sam(ref, test)))

    @property
    def aggregate(self):
        if not self.per_cube:
            return {"psnr": math.nan, "ssim": math.nan, "sam": math.nan}
        arr = np.array([[min(p, PSNR_CAP), s, a] for _, p, s, a in self.per_cube])
        m = arr.mean(axis=0)
        return {"psnr": float(m[0]), "ssim": float(m[1]), "sam": float(m[2])}

    def rows(self):
        for cid, p, s, a in self.per_cube:
            yield cid, min(p, PSNR_CAP), s, a

    def to_text(self):
        width = max([len("id"), len("mean")] + [len(r[0]) for r in self.per_cube])
        out = io.StringIO()
        for k, v in sorted(self.metadata.items()):
            out.write(f"# {k}: {v}\n")
        out.write(f"{'id':<{width}}  {'PSNR(dB)':>9}  {'SSIM':>7}  {'SAM(deg)':>9}\n")
        for cid, p, s, a in self.rows():
            out.write(f"{cid:<{width}}  {p:9.3f}  {s:7.4f}  {a:9.3f}\n")
        agg = self.aggregate
        out.write(f"{'mean':<{width}}  {agg['psnr']:9.3f}  {agg['ssim']:7.4f}  {agg['sam']:9.3f}\n")
        for w in self.warnings:
            out.write(f"# warning: {w}\n")
        return out.getvalue()

    def to_csv(self):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["id", "psnr_db", "ssim", "sam_deg"])
        for cid, p, s, a in self.rows():
            writer.writerow([cid, repr(p), repr(s), repr(a)])
        agg = self.aggregate
        writer.writerow(["mean", repr(agg["psnr"]), repr(agg["ssim"]), repr(agg["sam"])])
        return out.getvalue()
