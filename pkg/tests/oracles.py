"""Slow per-pixel reference implementations of the image metrics."""

import math

import numpy as np


def brute_ssim_band(x, y):
    """Direct per-pixel summation over each 11x11 Gaussian window."""
    g = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01**2, 0.03**2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            mx, my = (w * px).sum(), (w * py).sum()
            vx = (w * (px - mx) ** 2).sum()
            vy = (w * (py - my) ** 2).sum()
            cxy = (w * (px - mx) * (py - my)).sum()
            vals.append(((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx**2 + my**2 + c1) * (vx + vy + c2)))
    return float(np.mean(vals))


def brute_sam(x, y):
    angles = []
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            a, b = x[i, j], y[i, j]
            na, nb = math.sqrt((a * a).sum()), math.sqrt((b * b).sum())
            if na == 0 or nb == 0:
                continue
            c = max(-1.0, min(1.0, float((a * b).sum()) / (na * nb)))
            angles.append(math.degrees(math.acos(c)))
    return float(np.mean(angles))
