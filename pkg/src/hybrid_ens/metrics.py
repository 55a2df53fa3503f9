"""Image quality metrics and effective-receptive-field diagnostics."""
from __future__ import annotations

import math
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .blocks import ConfigurationError
from .tensor import ops
from .tensor.core import DimensionError, Tensor, backward

PSNR_CAP = 99.0


def psnr(a, b, peak: float = 1.0) -> float:
    """``10 log10(peak^2 / MSE)`` over all entries; identical inputs give ``PSNR_CAP``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"psnr: shapes {a.shape} and {b.shape} differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def batch_psnr(pred, target, peak: float = 1.0, clamp: bool = True) -> float:
    """Mean per-image PSNR over the leading axis; predictions clamped to [0, peak]."""
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if clamp:
        pred = np.clip(pred, 0.0, peak)
    return float(np.mean([psnr(p, t, peak) for p, t in zip(pred, target)]))


def ssim(a, b, window: int = 8, K1: float = 0.01, K2: float = 0.03, peak: float = 1.0) -> float:
    """Mean SSIM over all valid ``window`` x ``window`` uniform windows and channels.

    Accepts (h, w), (c, h, w) or (n, c, h, w). Local statistics use population
    (biased) moments.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise DimensionError(f"ssim: shapes {a.shape} and {b.shape} differ")
    if window > min(a.shape[-2:]):
        raise ConfigurationError(f"ssim window {window} exceeds image size {a.shape[-2:]}")
    C1, C2 = (K1 * peak) ** 2, (K2 * peak) ** 2

    def local_mean(x):
        return sliding_window_view(x, (window, window), axis=(-2, -1)).mean(axis=(-2, -1))

    mu_a, mu_b = local_mean(a), local_mean(b)
    var_a = local_mean(a * a) - mu_a ** 2
    var_b = local_mean(b * b) - mu_b ** 2
    cov = local_mean(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a ** 2 + mu_b ** 2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


def batch_ssim(pred, target, window: int = 8, clamp: bool = True) -> float:
    pred, target = np.asarray(pred, dtype=float), np.asarray(target, dtype=float)
    if clamp:
        pred = np.clip(pred, 0.0, 1.0)
    return float(np.mean([ssim(p, t, window) for p, t in zip(pred, target)]))


# ----------------------------------------------------------------------- ERF

def erf_map(fn: Callable[[Tensor], Tensor], probes, normalize: bool = True) -> np.ndarray:
    """Mean over probes of ``|d (centre output summed over channels) / d input|``.

    ``fn`` maps (n, c, h, w) to (n, c', h, w). The gradient magnitude is summed
    over input channels; the result is an (h, w) map normalised to sum 1.
    """
    probes = np.asarray(probes, dtype=float)
    if probes.ndim == 3:
        probes = probes[None]
    if len(probes) < 1:
        raise ValueError("erf_map needs at least one probe")
    h, w = probes.shape[-2:]
    acc = np.zeros((h, w))
    for p in probes:
        x = Tensor(p[None].copy(), requires_grad=True)
        out = fn(x)
        cy, cx = out.shape[2] // 2, out.shape[3] // 2
        mask = np.zeros(out.shape)
        mask[:, :, cy, cx] = 1.0
        backward(ops.sum_all(ops.hadamard(out, Tensor(mask))))
        acc += np.abs(x.grad[0]).sum(axis=0)
    acc /= len(probes)
    total = acc.sum()
    if normalize and total > 0:
        acc = acc / total
    return acc


def erf_mass_within(m: np.ndarray, radius: float) -> float:
    """Fraction of the map's mass within Euclidean ``radius`` of the centre pixel."""
    m = np.asarray(m, dtype=float)
    h, w = m.shape
    yy, xx = np.mgrid[0:h, 0:w]
    inside = np.hypot(yy - h // 2, xx - w // 2) <= radius
    total = m.sum()
    if total == 0:
        return 0.0
    return float(m[inside].sum() / total)
