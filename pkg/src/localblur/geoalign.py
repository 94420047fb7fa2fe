"""Camera-to-camera geometric alignment.

Flow is estimated once per scene from a static reference pair with a
coarse-to-fine block phase correlation and then reused for every pair of
that scene.  Convention: ``ref_b(x + u, y + v) ~= ref_a(x, y)``, and
``warp(img, flow)`` samples ``img`` at ``(x + u, y + v)``.
"""
from __future__ import annotations

import numpy as np
from scipy.ndimage import median_filter

from .imgcore import (MAX_FLOW, FlowField, ImageError, as_image, bilinear_sample,
                      downsample2, luminance, same_shape)

MIN_BLOCK_STD = 1e-3


class NoTextureError(ImageError):
    pass


def _gray(img) -> np.ndarray:
    return luminance(as_image(img))


def _subpixel(c_m: float, c_0: float, c_p: float) -> float:
    den = c_m - 2.0 * c_0 + c_p
    if den >= 0:
        return 0.0
    return float(np.clip(0.5 * (c_m - c_p) / den, -0.5, 0.5))


def _peak(corr: np.ndarray) -> tuple[float, float, float]:
    """Signed (dx, dy) of the correlation peak with parabolic refinement."""
    h, w = corr.shape
    iy, ix = np.unravel_index(np.argmax(corr), corr.shape)
    c0 = corr[iy, ix]
    dx = _subpixel(corr[iy, (ix - 1) % w], c0, corr[iy, (ix + 1) % w])
    dy = _subpixel(corr[(iy - 1) % h, ix], c0, corr[(iy + 1) % h, ix])
    px = ix if ix <= w // 2 else ix - w
    py = iy if iy <= h // 2 else iy - h
    return px + dx, py + dy, float(c0)


def _cross_power(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Normalised cross-power spectra of stacked blocks, shape (..., h, w)."""
    fa = np.fft.fft2(a)
    fb = np.fft.fft2(b)
    r = fb * np.conj(fa)
    r /= np.maximum(np.abs(r), 1e-12)
    return np.real(np.fft.ifft2(r))


def _window(h: int, w: int) -> np.ndarray:
    return np.outer(np.hanning(h), np.hanning(w))


def phase_correlate(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    """Translation ``(dx, dy)`` with ``b(x + d) ~= a(x)``, plus peak height."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    same_shape(a, b)
    win = _window(*a.shape)
    corr = _cross_power((a - a.mean()) * win, (b - b.mean()) * win)
    return _peak(corr)


def _lk_refine(a, b, boxes, du, dv, iters: int = 4):
    """Gauss-Newton refinement of per-box translations.

    ``boxes`` is an ``(n, 4)`` int array of ``y0, x0, bh, bw`` (all boxes the
    same size); ``du, dv`` are the starting translations, updated so that
    ``b(x + d) ~= a(x)`` in each box.
    """
    gy_a, gx_a = np.gradient(a)
    bh, bw = int(boxes[0, 2]), int(boxes[0, 3])
    yy, xx = np.mgrid[0:bh, 0:bw]
    ys = boxes[:, 0, None, None] + yy[None]
    xs = boxes[:, 1, None, None] + xx[None]
    A = a[ys, xs]
    Ix, Iy = gx_a[ys, xs], gy_a[ys, xs]
    hxx = (Ix * Ix).sum(axis=(1, 2))
    hxy = (Ix * Iy).sum(axis=(1, 2))
    hyy = (Iy * Iy).sum(axis=(1, 2))
    det = hxx * hyy - hxy ** 2
    ok = det > 1e-12 * np.maximum(hxx + hyy, 1e-30) ** 2
    du = np.array(du, dtype=np.float64)
    dv = np.array(dv, dtype=np.float64)
    for _ in range(iters):
        bw_, inside = bilinear_sample(b, xs + du[:, None, None], ys + dv[:, None, None])
        e = np.where(inside, bw_ - A, 0.0)
        gx = (np.where(inside, Ix, 0.0) * e).sum(axis=(1, 2))
        gy = (np.where(inside, Iy, 0.0) * e).sum(axis=(1, 2))
        safe = np.where(ok, det, 1.0)
        step_u = -(hyy * gx - hxy * gy) / safe
        step_v = -(hxx * gy - hxy * gx) / safe
        step_u = np.clip(np.where(ok, step_u, 0.0), -1.0, 1.0)
        step_v = np.clip(np.where(ok, step_v, 0.0), -1.0, 1.0)
        du += step_u
        dv += step_v
        if np.max(np.abs(step_u), initial=0) < 1e-4 and np.max(np.abs(step_v), initial=0) < 1e-4:
            break
    return du, dv


def _dense(grid_u, grid_v, cy, cx, h, w):
    """Separable bilinear interpolation of block values to every pixel."""
    xs, ys = np.arange(w), np.arange(h)
    out = []
    for g in (grid_u, grid_v):
        rows = np.stack([np.interp(xs, cx, r) for r in np.atleast_2d(g)])
        out.append(np.stack([np.interp(ys, cy, col) for col in rows.T], axis=1))
    return out


def _block_centres(extent: int, block: int, step: int) -> np.ndarray:
    if extent <= block:
        return np.array([(extent - 1) / 2.0])
    starts = np.arange(0, extent - block + 1, step)
    if starts[-1] != extent - block:
        starts = np.append(starts, extent - block)
    return starts + (block - 1) / 2.0


def _level_flow(a, b, prior_u, prior_v, block, step, refine):
    h, w = a.shape
    bh, bw = min(block, h), min(block, w)
    cy = _block_centres(h, bh, step)
    cx = _block_centres(w, bw, step)
    blocks_a, blocks_b, base, flat, boxes = [], [], [], [], []
    for y in cy:
        for x in cx:
            ya = int(round(y - (bh - 1) / 2.0))
            xa = int(round(x - (bw - 1) / 2.0))
            du = int(round(prior_u[int(round(y)), int(round(x))]))
            dv = int(round(prior_v[int(round(y)), int(round(x))]))
            yb = int(np.clip(ya + dv, 0, h - bh))
            xb = int(np.clip(xa + du, 0, w - bw))
            pa = a[ya:ya + bh, xa:xa + bw]
            pb = b[yb:yb + bh, xb:xb + bw]
            blocks_a.append(pa - pa.mean())
            blocks_b.append(pb - pb.mean())
            base.append((xb - xa, yb - ya))
            boxes.append((ya, xa, bh, bw))
            flat.append(pa.std() < MIN_BLOCK_STD or pb.std() < MIN_BLOCK_STD)
    win = _window(bh, bw)
    corr = _cross_power(np.stack(blocks_a) * win, np.stack(blocks_b) * win)
    gu = np.zeros(len(base))
    gv = np.zeros(len(base))
    conf = np.zeros(len(base))
    for i, c in enumerate(corr):
        bu, bv = base[i]
        if flat[i]:
            # no texture: keep the prior, flag it
            gu[i], gv[i] = bu, bv
            continue
        dx, dy, peak = _peak(c)
        gu[i], gv[i], conf[i] = bu + dx, bv + dy, peak
    if refine:
        textured = ~np.asarray(flat)
        if np.any(textured):
            bx = np.asarray(boxes)[textured]
            gu[textured], gv[textured] = _lk_refine(a, b, bx, gu[textured], gv[textured])
    shape = (len(cy), len(cx))
    gu, gv, conf = gu.reshape(shape), gv.reshape(shape), conf.reshape(shape)
    if min(shape) >= 3:
        gu = median_filter(gu, size=3, mode="nearest")
        gv = median_filter(gv, size=3, mode="nearest")
    return gu, gv, conf, cy, cx


def estimate_flow(ref_a, ref_b, levels: int = 3, block: int = 64, step: int = 32,
                  max_magnitude: float = MAX_FLOW) -> FlowField:
    """Dense flow from ``ref_a`` to ``ref_b`` (see module docstring)."""
    a0, b0 = _gray(ref_a), _gray(ref_b)
    same_shape(a0, b0)
    pyr_a, pyr_b = [a0], [b0]
    for _ in range(levels - 1):
        if min(pyr_a[-1].shape) < 2 * 16:
            break
        pyr_a.append(downsample2(pyr_a[-1]))
        pyr_b.append(downsample2(pyr_b[-1]))
    u = np.zeros(pyr_a[-1].shape)
    v = np.zeros(pyr_a[-1].shape)
    for lvl in range(len(pyr_a) - 1, -1, -1):
        a, b = pyr_a[lvl], pyr_b[lvl]
        h, w = a.shape
        if u.shape != (h, w):
            # upsample the previous level's field to this resolution
            ys = np.clip((np.arange(h) - 0.5) / 2.0, 0, u.shape[0] - 1)
            xs = np.clip((np.arange(w) - 0.5) / 2.0, 0, u.shape[1] - 1)
            gx, gy = np.meshgrid(xs, ys)
            u = 2.0 * bilinear_sample(u, gx, gy)[0]
            v = 2.0 * bilinear_sample(v, gx, gy)[0]
        gu, gv, conf, cy, cx = _level_flow(a, b, u, v, block, step, refine=lvl == 0)
        u, v = _dense(gu, gv, cy, cx, h, w)
    cdense = _dense(conf, conf, cy, cx, h, w)[0]
    return FlowField(u, v, cdense, max_magnitude)


def warp(img, flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Backward bilinear warp; returns the image and its in-frame mask."""
    a = as_image(img)
    h, w = a.shape[:2]
    if flow.shape != (h, w):
        raise ImageError(f"flow {flow.shape} does not match image {(h, w)}")
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    out, valid = bilinear_sample(a, gx + flow.u, gy + flow.v)
    return out, valid


def interior(flow: FlowField, pad: int = 1) -> tuple[slice, slice]:
    """Central crop guaranteed to sample inside the frame under ``flow``."""
    h, w = flow.shape
    m = int(np.ceil(max(np.abs(flow.u).max(), np.abs(flow.v).max()))) + pad
    if 2 * m >= min(h, w):
        raise ImageError("flow leaves no interior")
    return slice(m, h - m), slice(m, w - m)


def translation(a, b) -> tuple[float, float]:
    """Global translation ``d`` with ``b(x + d) ~= a(x)``."""
    ga, gb = _gray(a), _gray(b)
    same_shape(ga, gb)
    if ga.std() < MIN_BLOCK_STD or gb.std() < MIN_BLOCK_STD:
        raise NoTextureError("no texture: cannot measure a geometric error on flat images")
    dx, dy, _ = phase_correlate(ga, gb)
    h, w = ga.shape
    m = int(np.ceil(max(abs(dx), abs(dy)))) + 2
    if 2 * m < min(h, w):
        box = np.array([[m, m, h - 2 * m, w - 2 * m]])
        u, v = _lk_refine(ga, gb, box, [dx - 0.0], [dy - 0.0], iters=8)
        # boxes are anchored in a; shift the anchor so the estimate is global
        dx, dy = float(u[0]), float(v[0])
    return dx, dy


def geometric_error(a, b) -> float:
    """Magnitude of the global translation between two images, in pixels."""
    dx, dy = translation(a, b)
    return float(np.hypot(dx, dy))


def align_to(blur, flow: FlowField) -> tuple[np.ndarray, np.ndarray]:
    """Warp a blurred frame onto its sharp reference using a scene flow."""
    return warp(blur, flow)
