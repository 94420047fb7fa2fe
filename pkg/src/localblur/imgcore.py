"""Raster carriers and the small geometric primitives shared by every stage.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3, 4}`` and float64 samples nominally in ``[0, 1]``.  Masks and flow
fields are arrays too; only the Bayer mosaic needs extra metadata, so it is
the one dataclass here.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BAYER_PATTERNS = ("RGGB", "BGGR", "GRBG", "GBRG")
DEFAULT_FRAME_SIZE = (2152, 1436)  # width, height
MAX_FLOW = 32.0


class ImageError(ValueError):
    """Raised for malformed rasters or geometry that cannot be honoured."""


def as_image(arr, copy: bool = False) -> np.ndarray:
    """Validate and normalise ``arr`` to a float64 ``(H, W, C)`` image."""
    a = np.array(arr, dtype=np.float64, copy=copy) if copy else np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[2] not in (1, 3, 4):
        raise ImageError(f"expected (H, W, C) with C in {{1,3,4}}, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ImageError("empty image")
    if not np.all(np.isfinite(a)):
        raise ImageError("image contains non-finite samples")
    return a


def as_mask(arr) -> np.ndarray:
    """Return a 2-D float mask clamped to ``[0, 1]``."""
    m = np.asarray(arr, dtype=np.float64)
    if m.ndim == 3 and m.shape[2] == 1:
        m = m[:, :, 0]
    if m.ndim != 2:
        raise ImageError(f"mask must be 2-D, got shape {m.shape}")
    return np.clip(m, 0.0, 1.0)


def luminance(img: np.ndarray) -> np.ndarray:
    """Per-pixel channel mean (alpha channel ignored)."""
    img = as_image(img)
    c = 3 if img.shape[2] == 4 else img.shape[2]
    return img[:, :, :c].mean(axis=2)


def same_shape(a: np.ndarray, b: np.ndarray, what: str = "images") -> None:
    if a.shape != b.shape:
        raise ImageError(f"{what} differ in shape: {a.shape} vs {b.shape}")


@dataclass(frozen=True)
class BayerImage:
    """Single-plane colour mosaic with its CFA layout."""

    data: np.ndarray
    pattern: str = "RGGB"
    black_level: float = 0.0
    white_level: float = 65535.0

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ImageError("Bayer data must be 2-D")
        if d.shape[0] % 2 or d.shape[1] % 2:
            raise ImageError(f"Bayer dimensions must be even, got {d.shape[1]}x{d.shape[0]}")
        if self.pattern not in BAYER_PATTERNS:
            raise ImageError(f"unknown Bayer pattern {self.pattern!r}")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    def channel_index(self) -> np.ndarray:
        """Map each site to 0 (R), 1 (G) or 2 (B)."""
        return cfa_channel_map(self.height, self.width, self.pattern)

    def replace(self, data: np.ndarray) -> "BayerImage":
        return BayerImage(data, self.pattern, self.black_level, self.white_level)


def cfa_channel_map(height: int, width: int, pattern: str) -> np.ndarray:
    lut = {"R": 0, "G": 1, "B": 2}
    tile = np.array([[lut[pattern[0]], lut[pattern[1]]],
                     [lut[pattern[2]], lut[pattern[3]]]], dtype=np.int8)
    return np.tile(tile, (height // 2, width // 2))


def mosaic(img: np.ndarray, pattern: str = "RGGB") -> BayerImage:
    """Sample an RGB image through a colour filter array."""
    img = as_image(img)
    if img.shape[2] < 3:
        raise ImageError("mosaic needs an RGB image")
    h, w = img.shape[:2]
    h2, w2 = h - h % 2, w - w % 2
    idx = cfa_channel_map(h2, w2, pattern)
    rgb = img[:h2, :w2, :3]
    data = np.take_along_axis(rgb, idx[:, :, None].astype(np.intp), axis=2)[:, :, 0]
    return BayerImage(data, pattern)


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    @property
    def width(self) -> int:
        return max(0, self.x1 - self.x0)

    @property
    def height(self) -> int:
        return max(0, self.y1 - self.y0)

    @property
    def empty(self) -> bool:
        return self.width == 0 or self.height == 0

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y0, self.y1), slice(self.x0, self.x1)

    def intersect(self, other: "Rect") -> "Rect":
        return Rect(max(self.x0, other.x0), max(self.y0, other.y0),
                    min(self.x1, other.x1), min(self.y1, other.y1))

    def translate(self, k: int, l: int) -> "Rect":
        return Rect(self.x0 + k, self.y0 + l, self.x1 + k, self.y1 + l)

    @classmethod
    def full(cls, arr: np.ndarray) -> "Rect":
        return cls(0, 0, arr.shape[1], arr.shape[0])


def shift(img: np.ndarray, k: int, l: int, valid: Rect | None = None) -> tuple[np.ndarray, Rect]:
    """Translate ``img`` by ``k`` columns and ``l`` rows.

    ``out[y + l, x + k] == img[y, x]``.  The returned rectangle is the part of
    the output frame that carries real samples; everything outside it is edge
    replication and must be treated as invalid.  ``valid`` restricts the
    input's own valid region (for chained shifts).
    """
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape[:2]
    k, l = int(k), int(l)
    if abs(k) > w or abs(l) > h:
        raise ImageError(f"shift ({k}, {l}) exceeds image size {w}x{h}")
    src = Rect.full(a) if valid is None else valid.intersect(Rect.full(a))
    rect = src.translate(k, l).intersect(Rect.full(a))
    if rect.empty:
        raise ImageError("degenerate shift: overlap is empty")
    ys = np.clip(np.arange(h) - l, 0, h - 1)
    xs = np.clip(np.arange(w) - k, 0, w - 1)
    return a[ys][:, xs], rect


def overlap_views(pred: np.ndarray, ref: np.ndarray, k: int, l: int) -> tuple[np.ndarray, np.ndarray]:
    """Crops of ``shift(pred, k, l)`` and ``ref`` over their shared valid area."""
    same_shape(pred, ref)
    h, w = ref.shape[:2]
    rect = Rect(max(0, k), max(0, l), w + min(0, k), h + min(0, l))
    if rect.empty:
        raise ImageError("degenerate shift: overlap is empty")
    ys, xs = rect.slices
    src = pred[ys.start - l:ys.stop - l, xs.start - k:xs.stop - k]
    return src, ref[ys, xs]


def downsample2(img: np.ndarray) -> np.ndarray:
    """2x2 box average; odd trailing rows/columns are dropped."""
    a = np.asarray(img, dtype=np.float64)
    h, w = a.shape[:2]
    if h < 2 or w < 2:
        raise ImageError(f"cannot downsample a {w}x{h} image")
    h2, w2 = h // 2, w // 2
    a = a[:2 * h2, :2 * w2]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def pyramid(img: np.ndarray, levels: int = 3) -> list[np.ndarray]:
    out = [np.asarray(img, dtype=np.float64)]
    for _ in range(levels - 1):
        out.append(downsample2(out[-1]))
    return out


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``img`` at float coordinates; returns values and an in-frame flag.

    Out-of-frame coordinates are clamped to the border for the value and
    reported as invalid.  Integer coordinates reproduce samples exactly.
    """
    a = np.asarray(img, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
    h, w = a.shape[:2]
    valid = (xs >= -1e-9) & (xs <= w - 1 + 1e-9) & (ys >= -1e-9) & (ys <= h - 1 + 1e-9)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), w - 2 if w > 1 else 0)
    y0 = np.minimum(np.floor(yc).astype(np.intp), h - 2 if h > 1 else 0)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xc - x0)[..., None]
    fy = (yc - y0)[..., None]
    out = ((1 - fy) * ((1 - fx) * a[y0, x0] + fx * a[y0, x1])
           + fy * ((1 - fx) * a[y1, x0] + fx * a[y1, x1]))
    if squeeze:
        out = out[..., 0]
    return out, valid


@dataclass
class FlowField:
    """Dense per-pixel displacement ``(u, v)`` with an optional confidence map."""

    u: np.ndarray
    v: np.ndarray
    confidence: np.ndarray | None = field(default=None, repr=False)
    max_magnitude: float = MAX_FLOW

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        if self.u.shape != self.v.shape or self.u.ndim != 2:
            raise ImageError("flow planes must be 2-D and equal in shape")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise ImageError("flow contains non-finite values")
        mag = np.hypot(self.u, self.v)
        over = mag > self.max_magnitude
        if np.any(over):
            scale = np.where(over, self.max_magnitude / np.maximum(mag, 1e-12), 1.0)
            self.u = self.u * scale
            self.v = self.v * scale

    @property
    def shape(self) -> tuple[int, int]:
        return self.u.shape

    @classmethod
    def constant(cls, height: int, width: int, u: float, v: float) -> "FlowField":
        return cls(np.full((height, width), float(u)), np.full((height, width), float(v)))
