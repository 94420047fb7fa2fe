"""Synthetic local blur: smear a masked foreground and paste it back.

The foreground is copied ``steps`` times along a translation path or a
rotation about the mask centroid, the composited copies are averaged, a 5x5
box kernel is applied, and the result replaces the input only inside the
(dilated) union of the moved footprints.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, uniform_filter

from .imgcore import as_image, as_mask, bilinear_sample

KERNEL_SIZE = 5
MAX_BLUR_SPAN = 70.0


class EmptyMaskWarning(UserWarning):
    pass


@dataclass
class SynthResult:
    image: np.ndarray
    mask: np.ndarray      # region actually replaced
    footprint: np.ndarray  # union of moved foreground footprints
    empty: bool = False


def box_blur(img: np.ndarray, size: int = KERNEL_SIZE) -> np.ndarray:
    return uniform_filter(img, size=(size, size, 1), mode="nearest")


def _copy_offsets(mode: str, steps: int, magnitude: float, direction: float):
    if steps < 1:
        raise ValueError("steps must be >= 1")
    fr = np.linspace(0.0, 1.0, steps) if steps > 1 else np.zeros(1)
    if mode == "translation":
        th = math.radians(direction)
        return [(f * magnitude * math.cos(th), f * magnitude * math.sin(th), 0.0) for f in fr]
    if mode == "rotation":
        return [(0.0, 0.0, f * magnitude) for f in fr]
    raise ValueError(f"unknown mode {mode!r}; use 'translation' or 'rotation'")


def _moved(layer: np.ndarray, cov: np.ndarray, dx: float, dy: float, angle: float, centre):
    """Move a premultiplied layer and its coverage; integer shifts are exact."""
    h, w = cov.shape
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    if angle == 0.0:
        sx, sy = gx - dx, gy - dy
    else:
        cx, cy = centre
        th = math.radians(angle)
        c, s = math.cos(th), math.sin(th)
        rx, ry = gx - cx, gy - cy
        sx = cx + c * rx + s * ry
        sy = cy - s * rx + c * ry
    col, inside = bilinear_sample(layer, sx, sy)
    cv, _ = bilinear_sample(cov, sx, sy)
    return np.where(inside[..., None], col, 0.0), np.where(inside, cv, 0.0)


def blur_span(mask: np.ndarray, mode: str, magnitude: float) -> float:
    """Longest path (px) any foreground pixel travels."""
    if mode == "translation":
        return abs(magnitude)
    ys, xs = np.nonzero(mask > 0.5)
    cy, cx = ys.mean(), xs.mean()
    r = np.sqrt((ys - cy) ** 2 + (xs - cx) ** 2).max()
    return r * math.radians(abs(magnitude))


def synth_local_blur(sharp, fg_mask, mode: str = "translation", steps: int = 5,
                     magnitude: float = 10.0, direction: float = 0.0, kernel: bool = True,
                     kernel_first: bool = False) -> SynthResult:
    """Locally blur the masked foreground of ``sharp``.

    ``magnitude`` is a path length in pixels for translation and an angle in
    degrees for rotation.  ``kernel_first`` applies the box kernel to the
    foreground layer before moving it instead of to the averaged result.
    """
    img = as_image(sharp)
    m = as_mask(fg_mask)
    fg = m > 0.5
    if not fg.any():
        warnings.warn("empty foreground mask; image returned unchanged", EmptyMaskWarning)
        return SynthResult(img.copy(), np.zeros(m.shape), np.zeros(m.shape), empty=True)
    span = blur_span(m, mode, magnitude) + (KERNEL_SIZE - 1 if kernel else 0)
    if span > MAX_BLUR_SPAN:
        raise ValueError(f"blur span {span:.1f} px exceeds {MAX_BLUR_SPAN:.0f} px")
    cov0 = fg.astype(np.float64)
    layer0 = img * cov0[..., None]
    if kernel and kernel_first:
        layer0 = box_blur(layer0)
        cov0 = box_blur(cov0[..., None])[..., 0]
    ys, xs = np.nonzero(fg)
    centre = (xs.mean(), ys.mean())

    acc = np.zeros_like(img)
    foot = np.zeros(m.shape, dtype=bool)
    offsets = _copy_offsets(mode, steps, magnitude, direction)
    for dx, dy, ang in offsets:
        col, cov = _moved(layer0, cov0, dx, dy, ang, centre)
        acc += col + (1.0 - cov[..., None]) * img
        foot |= cov > 0
    avg = acc / len(offsets)
    region = foot
    if kernel and not kernel_first:
        avg = box_blur(avg)
        region = binary_dilation(foot, np.ones((KERNEL_SIZE, KERNEL_SIZE), dtype=bool))
    out = img.copy()
    out[region] = avg[region]
    return SynthResult(out, region.astype(np.float64), foot.astype(np.float64))
