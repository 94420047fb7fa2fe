"""PSNR, SSIM, their mask-weighted forms, and shift-aligned PSNR."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .imgcore import ImageError, as_image, as_mask, overlap_views, same_shape

PSNR_CAP = 100.0
MSE_FLOOR = 1e-10
PIXEL_EPS = 1e-8  # per-pixel squared-error floor in the weighted PSNR
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5   # 11x11 window
K1, K2 = 0.01, 0.03
ALIGN_RADIUS = 8


def _pair(a, b):
    a, b = as_image(a), as_image(b)
    same_shape(a, b)
    return a, b


def _psnr_from_mse(mse: float, peak: float) -> float:
    if mse < MSE_FLOOR:
        return PSNR_CAP
    return float(10.0 * np.log10(peak * peak / mse))


def psnr(S, S_hat, peak: float = 1.0) -> float:
    a, b = _pair(S, S_hat)
    return _psnr_from_mse(float(np.mean((a - b) ** 2)), peak)


def _blur(x: np.ndarray) -> np.ndarray:
    # 'reflect' here is the half-sample symmetric extension
    return gaussian_filter(x, SSIM_SIGMA, mode="reflect", truncate=SSIM_RADIUS / SSIM_SIGMA)


def ssim_map(S, S_hat, peak: float = 1.0) -> np.ndarray:
    """Per-pixel SSIM, averaged over channels; shape ``(H, W)``."""
    a, b = _pair(S, S_hat)
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2
    out = np.zeros(a.shape[:2])
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mx, my = _blur(x), _blur(y)
        sxx = _blur(x * x) - mx * mx
        syy = _blur(y * y) - my * my
        sxy = _blur(x * y) - mx * my
        out += ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return out / a.shape[2]


def ssim(S, S_hat, peak: float = 1.0) -> float:
    return float(ssim_map(S, S_hat, peak).mean())


def _weights(mask, shape) -> np.ndarray:
    m = as_mask(mask)
    if m.shape != shape:
        raise ImageError(f"mask {m.shape} does not match image {shape}")
    if m.sum() <= 0:
        raise ImageError("empty evaluation region")
    return m


def pixel_psnr(S, S_hat, peak: float = 1.0, eps: float = PIXEL_EPS) -> np.ndarray:
    """Per-pixel PSNR from the channel-mean squared error plus ``eps``."""
    a, b = _pair(S, S_hat)
    se = np.mean((a - b) ** 2, axis=2)
    return 10.0 * np.log10(peak * peak / (se + eps))


def weighted_psnr(S, S_hat, mask, peak: float = 1.0, eps: float = PIXEL_EPS) -> float:
    p = pixel_psnr(S, S_hat, peak, eps)
    m = _weights(mask, p.shape)
    return float((p * m).sum() / m.sum())


def weighted_ssim(S, S_hat, mask, peak: float = 1.0) -> float:
    s = ssim_map(S, S_hat, peak)
    m = _weights(mask, s.shape)
    return float((s * m).sum() / m.sum())


def aligned_psnr(S, S_hat, radius: int = ALIGN_RADIUS, peak: float = 1.0,
                 mask=None) -> tuple[float, tuple[int, int]]:
    """Best PSNR over integer shifts of ``S_hat`` and the shift achieving it.

    The shift ``(k, l)`` moves ``S_hat`` by ``k`` columns and ``l`` rows; PSNR
    is taken on the overlap only.  With ``mask`` the error is restricted to
    mask-positive pixels of ``S`` inside the overlap.  Ties go to the
    smallest shift.
    """
    a, b = _pair(S, S_hat)
    h, w = a.shape[:2]
    if h < 2 * radius + 1 or w < 2 * radius + 1:
        raise ImageError(f"image {w}x{h} too small for alignment radius {radius}")
    m = None if mask is None else _weights(mask, (h, w))
    shifts = sorted(((k, l) for k in range(-radius, radius + 1) for l in range(-radius, radius + 1)),
                    key=lambda s: (s[0] ** 2 + s[1] ** 2, s))
    best, best_shift = -np.inf, (0, 0)
    for k, l in shifts:
        pred, ref = overlap_views(b, a, k, l)
        se = (pred - ref) ** 2
        if m is None:
            mse = float(se.mean())
        else:
            _, mc = overlap_views(m, m, k, l)
            if mc.sum() <= 0:
                continue
            mse = float((se.mean(axis=2) * mc).sum() / mc.sum())
        val = _psnr_from_mse(mse, peak)
        if val > best:
            best, best_shift = val, (k, l)
    return best, best_shift


@dataclass
class MetricReport:
    PSNR: float
    SSIM: float
    PSNR_w: float
    SSIM_w: float
    PSNR_a: float
    shift_a: tuple[int, int]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shift_a"] = list(self.shift_a)
        return d


COLUMNS = ("PSNR", "SSIM", "PSNR_w", "SSIM_w", "PSNR_a")


def evaluate_pair(S, S_hat, mask, radius: int = ALIGN_RADIUS, mask_align: bool = False) -> MetricReport:
    pa, shift_a = aligned_psnr(S, S_hat, radius, mask=mask if mask_align else None)
    return MetricReport(psnr(S, S_hat), ssim(S, S_hat), weighted_psnr(S, S_hat, mask),
                        weighted_ssim(S, S_hat, mask), pa, shift_a)


def aggregate(reports) -> dict:
    """Column means over a list of reports."""
    reports = list(reports)
    if not reports:
        return {c: None for c in COLUMNS}
    return {c: float(np.mean([getattr(r, c) for r in reports])) for c in COLUMNS}
