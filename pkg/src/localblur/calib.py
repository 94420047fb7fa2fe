"""Location-dependent colour correction, per-channel gain alignment, and the
normalised luminance difference used to score both.

The correction field for channel ``c`` is a bivariate cubic in normalised
pixel coordinates::

    alpha_c(x, y) = a0 x^3 + a1 x^2 y + a2 x y^2 + a3 y^3
                  + a4 x^2 + a5 x y + a6 y^2 + a7 x + a8 y + a9

with ``x, y`` mapped from pixel indices onto ``[-1, 1]``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .imgcore import BayerImage, cfa_channel_map, ImageError, as_image, luminance, same_shape

N_TERMS = 10
TERM_NAMES = ("x^3", "x^2y", "xy^2", "y^3", "x^2", "xy", "y^2", "x", "y", "1")
CHANNELS = ("R", "G", "B")
_X_EXP = (3, 2, 1, 0, 2, 1, 0, 1, 0, 0)
_Y_EXP = (0, 1, 2, 3, 0, 1, 2, 0, 1, 0)
COND_LIMIT = 1e10


class CalibrationError(ValueError):
    pass


def normalize_coords(x, y, width: int, height: int):
    """Pixel indices -> ``[-1, 1]`` (first/last pixel centre map to the ends)."""
    xn = 2.0 * np.asarray(x, dtype=np.float64) / max(width - 1, 1) - 1.0
    yn = 2.0 * np.asarray(y, dtype=np.float64) / max(height - 1, 1) - 1.0
    return xn, yn


def cubic_basis(xn, yn) -> np.ndarray:
    """Design matrix, one row per point, columns in ``TERM_NAMES`` order."""
    xn = np.asarray(xn, dtype=np.float64).ravel()
    yn = np.asarray(yn, dtype=np.float64).ravel()
    one = np.ones_like(xn)
    return np.stack([xn ** 3, xn ** 2 * yn, xn * yn ** 2, yn ** 3,
                     xn ** 2, xn * yn, yn ** 2, xn, yn, one], axis=1)


@dataclass
class ColorCalibration:
    """Three rows of cubic constants plus the frame they were fitted on."""

    coeffs: np.ndarray
    width: int
    height: int
    patch_size: int = 0
    centers: np.ndarray | None = field(default=None, repr=False)
    residual_rms: np.ndarray | None = None

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64).reshape(3, N_TERMS)

    @classmethod
    def identity(cls, width: int, height: int) -> "ColorCalibration":
        c = np.zeros((3, N_TERMS))
        c[:, -1] = 1.0
        return cls(c, width, height)

    def alpha_at(self, x, y) -> np.ndarray:
        """Correction factors at pixel coordinates; shape ``(n, 3)``."""
        xn, yn = normalize_coords(x, y, self.width, self.height)
        return cubic_basis(xn, yn) @ self.coeffs.T

    def alpha_field(self, height: int | None = None, width: int | None = None) -> np.ndarray:
        """``(H, W, 3)`` correction field over the calibrated frame."""
        h = self.height if height is None else height
        w = self.width if width is None else width
        xn, yn = normalize_coords(np.arange(w), np.arange(h), self.width, self.height)
        px = np.stack([xn ** e for e in _X_EXP])
        py = np.stack([yn ** e for e in _Y_EXP])
        return np.einsum("cj,jy,jx->yxc", self.coeffs, py, px)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "basis": list(TERM_NAMES),
            "coordinates": "normalized: x' = 2x/(width-1) - 1, y' = 2y/(height-1) - 1",
            "width": self.width,
            "height": self.height,
            "patch_size": self.patch_size,
            "coeffs": {ch: self.coeffs[i].tolist() for i, ch in enumerate(CHANNELS)},
            "residual_rms": None if self.residual_rms is None else list(map(float, self.residual_rms)),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ColorCalibration":
        try:
            coeffs = np.array([d["coeffs"][ch] for ch in CHANNELS], dtype=np.float64)
            return cls(coeffs, int(d["width"]), int(d["height"]), int(d.get("patch_size", 0)))
        except (KeyError, TypeError, ValueError) as e:
            raise CalibrationError(f"malformed calibration record: {e}") from e

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)

    @classmethod
    def load(cls, path) -> "ColorCalibration":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def solve_least_squares(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Normal equations when well conditioned, pivoted QR otherwise."""
    ata = A.T @ A
    cond = np.linalg.cond(ata)
    if np.isfinite(cond) and cond < COND_LIMIT:
        return scipy.linalg.solve(ata, A.T @ b, assume_a="pos")
    q, r, piv = scipy.linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size < A.shape[1] or diag[-1] <= diag[0] * 1e-12:
        raise CalibrationError("degenerate patch layout: design matrix is rank deficient")
    z = scipy.linalg.solve_triangular(r, q.T @ b)
    x = np.empty_like(z)
    x[piv] = z
    return x


def patch_grid(width: int, height: int, nx: int, ny: int, size: int = 1) -> np.ndarray:
    """Centres of an ``nx`` by ``ny`` grid of ``size``-pixel patches, ``(K, 2)`` x/y.

    Each centre is the centroid of the pixel indices its window covers, so a
    window average of a linear field equals the field at the centre.
    """
    def axis(n, extent):
        starts = np.round((np.arange(n) + 0.5) * extent / n - size / 2.0).astype(int)
        starts = np.clip(starts, 0, extent - size)
        return starts + (size - 1) / 2.0
    gx, gy = np.meshgrid(axis(nx, width), axis(ny, height))
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def central_patch_index(centers: np.ndarray, width: int, height: int) -> int:
    c = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return int(np.argmin(np.sum((np.asarray(centers)[:, :2] - c) ** 2, axis=1)))


def measure_patches(img, centers: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel means of ``size`` x ``size`` windows around each centre.

    Returns ``(means, channel_centers)`` with shapes ``(K, 3)`` and
    ``(K, 3, 2)``.  For Bayer data each colour is averaged over its own sites
    and its centre is the centroid of those sites.
    """
    means, where, _ = _measure(img, centers, size, split_green=False)
    return means, where


def _measure(img, centers, size, split_green):
    centers = np.asarray(centers, dtype=np.float64)
    bayer = isinstance(img, BayerImage)
    if bayer:
        data, chan = img.data, img.channel_index()
        if size < 2:
            raise CalibrationError("Bayer patches need size >= 2")
    else:
        data = as_image(img)
    h, w = data.shape[:2]
    if size > min(h, w):
        raise CalibrationError(f"patch size {size} exceeds the frame")
    rows = 2 if (bayer and split_green) else 1
    k = len(centers)
    means = np.zeros((k * rows, 3))
    where = np.zeros((k * rows, 3, 2))
    pooled = np.zeros((k, 3))
    for i, (cx, cy) in enumerate(centers):
        x0 = int(np.clip(round(cx - (size - 1) / 2.0), 0, w - size))
        y0 = int(np.clip(round(cy - (size - 1) / 2.0), 0, h - size))
        win = data[y0:y0 + size, x0:x0 + size]
        if not bayer:
            rgb = win[:, :, :3] if win.shape[2] >= 3 else np.repeat(win, 3, axis=2)
            means[i] = pooled[i] = rgb.reshape(-1, 3).mean(axis=0)
            where[i, :] = (x0 + (size - 1) / 2.0, y0 + (size - 1) / 2.0)
            continue
        cw = chan[y0:y0 + size, x0:x0 + size]
        yy, xx = np.mgrid[y0:y0 + size, x0:x0 + size]
        for c in range(3):
            sel = cw == c
            pooled[i, c] = win[sel].mean()
            if c == 1 and rows == 2:
                # green occupies two sub-lattices, one per row parity
                for r, parity in enumerate((0, 1)):
                    sub = sel & ((yy % 2) == parity)
                    means[rows * i + r, c] = win[sub].mean()
                    where[rows * i + r, c] = (xx[sub].mean(), yy[sub].mean())
            else:
                for r in range(rows):
                    means[rows * i + r, c] = pooled[i, c]
                    where[rows * i + r, c] = (xx[sel].mean(), yy[sel].mean())
    return means, where, pooled


def fit_color_constants(patch_means, centers, target_index: int | None, width: int, height: int,
                        patch_size: int = 0, target_means=None) -> ColorCalibration:
    """Fit per-channel cubic constants so that ``alpha_k = target / patch_k``.

    ``centers`` is ``(K, 2)`` shared by all channels or ``(K, 3, 2)`` per
    channel.  ``target_means`` overrides the reference level taken from
    ``patch_means[target_index]``.
    """
    means = np.asarray(patch_means, dtype=np.float64)
    centers = np.asarray(centers, dtype=np.float64)
    if centers.ndim == 2:
        centers = np.repeat(centers[:, None, :], 3, axis=1)
    if means.ndim != 2 or means.shape[1] != 3 or centers.shape != (len(means), 3, 2):
        raise CalibrationError("need (K, 3) patch means and (K, 2) or (K, 3, 2) centres")
    k = len(means)
    if k < N_TERMS:
        raise CalibrationError(f"need at least {N_TERMS} patches, got {k}")
    target = means[target_index] if target_means is None else np.asarray(target_means, dtype=np.float64)
    if np.any(target <= 0):
        raise CalibrationError("target patch mean must be positive in every channel")
    if np.any(means <= 0):
        raise CalibrationError("patch means must be positive")
    alpha = target[None, :] / means
    coeffs = np.zeros((3, N_TERMS))
    resid = np.zeros(3)
    for c in range(3):
        xn, yn = normalize_coords(centers[:, c, 0], centers[:, c, 1], width, height)
        Z = cubic_basis(xn, yn)
        if np.linalg.matrix_rank(Z) < N_TERMS:
            raise CalibrationError("degenerate patch layout: design matrix is rank deficient")
        coeffs[c] = solve_least_squares(Z, alpha[:, c])
        resid[c] = np.sqrt(np.mean((Z @ coeffs[c] - alpha[:, c]) ** 2))
    return ColorCalibration(coeffs, width, height, patch_size, centers, resid)


def calibrate_from_flat(flat, nx: int = 10, ny: int = 8, patch_size: int = 32) -> ColorCalibration:
    """Calibrate a camera from one image of a uniform light source.

    The patch nearest the frame centre is the colour reference.  On Bayer
    data the two green sub-lattices enter the fit as separate observations.
    """
    if isinstance(flat, BayerImage):
        h, w = flat.data.shape
    else:
        h, w = as_image(flat).shape[:2]
    grid = patch_grid(w, h, nx, ny, patch_size)
    target = central_patch_index(grid, w, h)
    means, where, pooled = _measure(flat, grid, patch_size, split_green=True)
    return fit_color_constants(means, where, None, w, h, patch_size, target_means=pooled[target])


def target_sites(flat_shape: tuple[int, int], nx: int, ny: int, patch_size: int,
                 pattern: str | None = None) -> list[np.ndarray]:
    """Pixel coordinates of each channel's samples inside the reference patch."""
    h, w = flat_shape
    grid = patch_grid(w, h, nx, ny, patch_size)
    cx, cy = grid[central_patch_index(grid, w, h)]
    x0 = int(round(cx - (patch_size - 1) / 2.0))
    y0 = int(round(cy - (patch_size - 1) / 2.0))
    yy, xx = np.mgrid[y0:y0 + patch_size, x0:x0 + patch_size]
    pts = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)
    if pattern is None:
        return [pts, pts, pts]
    chan = cfa_channel_map(h, w, pattern)[y0:y0 + patch_size, x0:x0 + patch_size].ravel()
    return [pts[chan == c] for c in range(3)]


def reference_to(cal: "ColorCalibration", sites) -> "ColorCalibration":
    """Rescale each channel so the mean of ``1/alpha`` over its sites is 1.

    This is the normalisation a flat-field fit referenced to those sites
    recovers.
    """
    scale = np.empty(3)
    for c in range(3):
        pts = np.asarray(sites[c], dtype=np.float64).reshape(-1, 2)
        scale[c] = np.mean(1.0 / cal.alpha_at(pts[:, 0], pts[:, 1])[:, c])
    return ColorCalibration(cal.coeffs * scale[:, None], cal.width, cal.height)


def _field_for(img, calib: ColorCalibration):
    if isinstance(img, BayerImage):
        h, w = img.data.shape
        full = calib.alpha_field(h, w)
        return np.take_along_axis(full, img.channel_index()[:, :, None].astype(np.intp), axis=2)[:, :, 0]
    a = as_image(img)
    full = calib.alpha_field(a.shape[0], a.shape[1])
    if a.shape[2] == 1:
        return full.mean(axis=2, keepdims=True)
    if a.shape[2] == 4:
        return np.concatenate([full, np.ones(full.shape[:2] + (1,))], axis=2)
    return full


def color_correct(img, calib: ColorCalibration):
    """``P' = alpha(x, y) * P`` per channel (per CFA site for Bayer data)."""
    alpha = _field_for(img, calib)
    if np.any(alpha <= 0):
        raise CalibrationError("correction field is non-positive somewhere in the frame")
    if isinstance(img, BayerImage):
        return img.replace(img.data * alpha)
    return as_image(img) * alpha


def inject_color_cast(img, calib: ColorCalibration):
    """Inverse of :func:`color_correct`: divide by the correction field."""
    alpha = _field_for(img, calib)
    if np.any(alpha <= 0):
        raise CalibrationError("correction field is non-positive somewhere in the frame")
    if isinstance(img, BayerImage):
        return img.replace(img.data / alpha)
    return as_image(img) / alpha


def random_calibration(rng: np.random.Generator, width: int, height: int,
                       lo: float = 0.5, hi: float = 2.0, strength: float = 0.25,
                       anchor=None) -> ColorCalibration:
    """Draw cubic constants whose field stays inside ``[lo, hi]`` on the frame.

    With ``anchor`` (per-channel site lists, see :func:`target_sites`) the
    field is normalised the way a flat-field fit referenced there recovers.
    """
    probe_x = np.linspace(0, width - 1, 33)
    probe_y = np.linspace(0, height - 1, 33)
    gx, gy = np.meshgrid(probe_x, probe_y)
    for _ in range(1000):
        c = rng.uniform(-strength, strength, size=(3, N_TERMS))
        c[:, -1] = 1.0 + rng.uniform(-0.1, 0.1, size=3)
        cal = ColorCalibration(c, width, height)
        if anchor is not None:
            cal = reference_to(cal, anchor)
        vals = cal.alpha_at(gx, gy)
        if vals.min() >= lo and vals.max() <= hi:
            return cal
    raise CalibrationError("could not draw a bounded colour field")


# --- photometric alignment --------------------------------------------------

@dataclass(frozen=True)
class PhotometricGain:
    beta: tuple[float, float, float]

    def __post_init__(self):
        if any(not b > 0 for b in self.beta):
            raise CalibrationError(f"gains must be positive, got {self.beta}")


def channel_means(img) -> np.ndarray:
    if isinstance(img, BayerImage):
        chan = img.channel_index()
        return np.array([img.data[chan == c].mean() for c in range(3)])
    a = as_image(img)
    if a.shape[2] < 3:
        return np.repeat(a.mean(), 3)
    return a[:, :, :3].reshape(-1, 3).mean(axis=0)


def photometric_gain(blur, sharp) -> PhotometricGain:
    """``beta_c = mean_c(sharp) / mean_c(blur)``."""
    mb = channel_means(blur)
    ms = channel_means(sharp)
    if np.any(mb <= 0):
        raise CalibrationError("blurred image has a zero-mean channel")
    return PhotometricGain(tuple(float(v) for v in ms / mb))


def apply_gain(img, gain):
    """Multiply each channel (or CFA colour) by its gain."""
    beta = np.asarray(gain.beta if isinstance(gain, PhotometricGain) else gain, dtype=np.float64)
    if np.any(beta <= 0):
        raise CalibrationError("gains must be positive")
    if isinstance(img, BayerImage):
        return img.replace(img.data * beta[img.channel_index()])
    a = as_image(img)
    if a.shape[2] == 1:
        return a * beta.mean()
    out = a.copy()
    out[:, :, :3] *= beta
    return out


def delta_L(a, b) -> float:
    """``sum |l_a - l_b| / sum l_b`` on per-pixel channel-mean luminance."""
    if isinstance(a, BayerImage):
        a = a.data
    if isinstance(b, BayerImage):
        b = b.data
    la, lb = luminance(a), luminance(b)
    same_shape(la, lb)
    denom = lb.sum()
    if denom <= 0:
        raise ImageError("reference luminance sums to zero")
    return float(np.abs(la - lb).sum() / denom)
