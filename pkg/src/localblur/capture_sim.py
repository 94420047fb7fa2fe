"""Synthetic beam-splitter captures with known ground truth.

A scene is a static background plus one rigid sprite.  The long exposure is
the unweighted mean of ``F`` composited frames; the short exposure is the
first frame.  Degradations injected here (colour cast, channel gain,
misalignment) are exactly the ones the correction stages undo, so every
stage can be checked in closed loop.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import calib
from .imgcore import BayerImage, ImageError, as_image, as_mask, bilinear_sample

MASK_EPS = 2.0 / 255.0
DEFAULT_FRAMES = 30
MAX_MISALIGNMENT = 8.0


class SimulationError(ValueError):
    pass


# --- exposure rule ------------------------------------------------------------

@dataclass
class CaptureConfig:
    """Geometry of one capture; all lengths in metres, times in seconds."""

    c: float        # sensor pixel pitch
    n: float        # desired blur length in pixels
    d: float        # object distance
    l_img: float    # image distance
    v: float        # object speed
    tau: float = 1.0  # density-filter transmittance in front of the long-exposure camera

    def __post_init__(self):
        for name in ("c", "n", "d", "l_img", "v", "tau"):
            if not getattr(self, name) > 0:
                raise SimulationError(f"{name} must be strictly positive")
        if self.tau > 1:
            raise SimulationError("tau must lie in (0, 1]")

    @property
    def t_S(self) -> float:
        return required_short_exposure(self)

    @property
    def t_L(self) -> float:
        return self.t_S / self.tau


def required_short_exposure(cfg: CaptureConfig) -> float:
    """``t_S = c n d / (l' v)``: time for the object's image to cross ``n`` pixels."""
    den = cfg.l_img * cfg.v
    if den == 0:
        raise SimulationError("zero image distance or speed")
    return cfg.c * cfg.n * cfg.d / den


def long_exposure(t_s: float, tau: float) -> float:
    if not (0 < tau <= 1):
        raise SimulationError("tau must lie in (0, 1]")
    return t_s / tau


# --- motion scripts -----------------------------------------------------------

@dataclass(frozen=True)
class Transform:
    dx: float = 0.0
    dy: float = 0.0
    angle: float = 0.0  # degrees, about the sprite centre


@dataclass
class MotionScript:
    """A sprite moving over a static background.

    ``origin`` is the sprite's top-left corner in the frame for the identity
    transform; each transform offsets and rotates it.
    """

    background: np.ndarray
    sprite: np.ndarray
    alpha: np.ndarray
    origin: tuple[float, float]
    transforms: list[Transform] = field(default_factory=lambda: [Transform()])

    def __post_init__(self):
        self.background = as_image(self.background)
        self.sprite = as_image(self.sprite)
        self.alpha = as_mask(self.alpha)
        if self.sprite.shape[:2] != self.alpha.shape:
            raise SimulationError("sprite and alpha differ in size")
        if self.sprite.shape[2] != self.background.shape[2]:
            raise SimulationError("sprite and background differ in channel count")
        if not self.transforms:
            raise SimulationError("empty script: need at least one frame")
        self.transforms = [t if isinstance(t, Transform) else Transform(*t) for t in self.transforms]
        h, w = self.background.shape[:2]
        for i, t in enumerate(self.transforms):
            x0, y0, x1, y1 = self._bbox(t)
            if x0 < 0 or y0 < 0 or x1 > w - 1 or y1 > h - 1:
                raise SimulationError(f"frame {i}: sprite leaves the frame")

    @property
    def frames(self) -> int:
        return len(self.transforms)

    def _centre(self, t: Transform) -> tuple[float, float]:
        sh, sw = self.alpha.shape
        return self.origin[0] + (sw - 1) / 2.0 + t.dx, self.origin[1] + (sh - 1) / 2.0 + t.dy

    def _bbox(self, t: Transform) -> tuple[float, float, float, float]:
        sh, sw = self.alpha.shape
        cx, cy = self._centre(t)
        th = math.radians(t.angle)
        hw, hh = (sw - 1) / 2.0, (sh - 1) / 2.0
        ex = abs(math.cos(th)) * hw + abs(math.sin(th)) * hh
        ey = abs(math.sin(th)) * hw + abs(math.cos(th)) * hh
        return cx - ex, cy - ey, cx + ex, cy + ey

    def layer(self, t: Transform) -> tuple[tuple[slice, slice], np.ndarray, np.ndarray]:
        """Premultiplied sprite colour and coverage inside its frame box."""
        x0, y0, x1, y1 = self._bbox(t)
        ys = slice(int(math.floor(y0)), int(math.ceil(y1)) + 1)
        xs = slice(int(math.floor(x0)), int(math.ceil(x1)) + 1)
        gy, gx = np.mgrid[ys, xs].astype(np.float64)
        cx, cy = self._centre(t)
        sh, sw = self.alpha.shape
        th = math.radians(t.angle)
        c, s = math.cos(th), math.sin(th)
        rx, ry = gx - cx, gy - cy
        # inverse rotation back into sprite coordinates
        sx = (sw - 1) / 2.0 + c * rx + s * ry
        sy = (sh - 1) / 2.0 - s * rx + c * ry
        if t.angle == 0.0:
            sx = np.round(sx, 9)
            sy = np.round(sy, 9)
        premul = self.sprite * self.alpha[:, :, None]
        col, inside = bilinear_sample(premul, sx, sy)
        cov, _ = bilinear_sample(self.alpha, sx, sy)
        cov = np.where(inside, cov, 0.0)
        col = np.where(inside[:, :, None], col, 0.0)
        return (ys, xs), col, cov

    def composite(self, t: Transform) -> tuple[np.ndarray, np.ndarray]:
        """Full frame for one transform and its coverage map."""
        (ys, xs), col, cov = self.layer(t)
        out = self.background.copy()
        out[ys, xs] = col + (1.0 - cov[:, :, None]) * out[ys, xs]
        cover = np.zeros(self.background.shape[:2])
        cover[ys, xs] = cov
        return out, cover

    # text serialisation ----------------------------------------------------

    def save(self, path, image_format: str = "pfm") -> None:
        """Write the script and its three rasters next to it."""
        from .io import save_image
        path = Path(path)
        stem = path.with_suffix("")
        names = {}
        for key, img in (("background", self.background), ("sprite", self.sprite),
                         ("alpha", self.alpha[:, :, None])):
            p = stem.parent / f"{stem.name}_{key}.{image_format}"
            save_image(img, p)
            names[key] = p.name
        lines = ["# localblur motion script v1",
                 "# header: key = value; body: one 'dx dy angle_degrees' line per frame"]
        lines += [f"{k} = {v}" for k, v in names.items()]
        lines.append(f"origin = {self.origin[0]!r} {self.origin[1]!r}")
        lines.append("frames:")
        lines += [f"{t.dx!r} {t.dy!r} {t.angle!r}" for t in self.transforms]
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "MotionScript":
        from .io import load_image
        path = Path(path)
        header, frames, in_frames = {}, [], False
        for raw in path.read_text().splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line == "frames:":
                in_frames = True
                continue
            if in_frames:
                vals = [float(v) for v in line.split()]
                if len(vals) not in (2, 3):
                    raise SimulationError(f"bad frame line {raw!r}")
                frames.append(Transform(*vals))
            else:
                key, _, value = line.partition("=")
                header[key.strip()] = value.strip()
        try:
            bg = load_image(path.parent / header["background"])
            sprite = load_image(path.parent / header["sprite"])
            alpha = load_image(path.parent / header["alpha"])[:, :, 0]
            ox, oy = (float(v) for v in header["origin"].split())
        except KeyError as e:
            raise SimulationError(f"motion script missing key {e}") from e
        return cls(bg, sprite, alpha, (ox, oy), frames)


def linear_motion(frames: int, dx: float, dy: float, angle: float = 0.0) -> list[Transform]:
    """Evenly spaced transforms from identity to ``(dx, dy, angle)``."""
    if frames < 1:
        raise SimulationError("need at least one frame")
    if frames == 1:
        return [Transform()]
    return [Transform(dx * i / (frames - 1), dy * i / (frames - 1), angle * i / (frames - 1))
            for i in range(frames)]


def simulate_pair(script: MotionScript, mask_eps: float = MASK_EPS):
    """Long/short exposure pair and the ground-truth blur mask.

    Returns ``(blurred, sharp, gt_mask)``.
    """
    if script is None or script.frames < 1:
        raise SimulationError("empty script")
    bg = script.background
    acc = np.zeros_like(bg)
    cover_union = np.zeros(bg.shape[:2], dtype=bool)
    first = None
    moved = False
    for t in script.transforms:
        (ys, xs), col, cov = script.layer(t)
        # frame - background, accumulated only inside the sprite box
        acc[ys, xs] += col - cov[:, :, None] * bg[ys, xs]
        foot = np.zeros(bg.shape[:2], dtype=bool)
        foot[ys, xs] = cov > 0
        if first is None:
            first = ((ys, xs), col, cov, foot)
        else:
            same = (t == script.transforms[0])
            if not same:
                moved = True
                cover_union |= foot
    (ys, xs), col, cov, foot0 = first
    sharp = bg.copy()
    sharp[ys, xs] = col + (1.0 - cov[:, :, None]) * bg[ys, xs]
    blurred = bg + acc / script.frames
    if not moved:
        blurred = sharp.copy()
    diff = np.abs(blurred - sharp).max(axis=2) > mask_eps
    if moved:
        gt = cover_union | foot0 | diff
    else:
        gt = diff
    return blurred, sharp, gt.astype(np.float64)


# --- degradations -------------------------------------------------------------

def inject_color_cast(img, constants: calib.ColorCalibration):
    """Divide by the correction field so that ``color_correct`` undoes it."""
    return calib.inject_color_cast(img, constants)


def inject_brightness(img, gains):
    g = np.asarray(gains, dtype=np.float64)
    if np.any(g <= 0):
        raise SimulationError("gains must be positive")
    return calib.apply_gain(img, g)


def inject_misalignment(img, dx: float, dy: float) -> tuple[np.ndarray, np.ndarray]:
    """Move image content by ``(dx, dy)``; returns the image and its valid mask."""
    if abs(dx) > MAX_MISALIGNMENT or abs(dy) > MAX_MISALIGNMENT:
        raise SimulationError(f"misalignment must stay within {MAX_MISALIGNMENT} px")
    a = as_image(img)
    h, w = a.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    return bilinear_sample(a, gx - dx, gy - dy)


# --- scene generation ---------------------------------------------------------

def textured_background(rng: np.random.Generator, height: int, width: int,
                        channels: int = 3, sigma: float = 2.0) -> np.ndarray:
    """Band-limited colour noise in roughly ``[0.15, 0.75]``."""
    fine = gaussian_filter(rng.random((height, width, channels)), (sigma, sigma, 0))
    coarse = gaussian_filter(rng.random((height, width, channels)), (8 * sigma, 8 * sigma, 0))
    t = 0.7 * (fine - fine.mean()) / (fine.std() + 1e-12) + 0.3 * (coarse - coarse.mean()) / (coarse.std() + 1e-12)
    return np.clip(0.45 + 0.1 * t, 0.0, 1.0)


def make_sprite(rng: np.random.Generator, size: int, shape: str = "square",
                channels: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Bright textured sprite and its binary alpha."""
    base = rng.uniform(0.8, 0.95, size=channels)
    tex = gaussian_filter(rng.random((size, size, channels)), (1.5, 1.5, 0))
    sprite = np.clip(base + 0.2 * (tex - tex.mean()), 0.0, 1.0)
    if shape == "square":
        alpha = np.ones((size, size))
    elif shape == "disc":
        yy, xx = np.mgrid[0:size, 0:size]
        r = (size - 1) / 2.0
        alpha = (((xx - r) ** 2 + (yy - r) ** 2) <= r * r).astype(np.float64)
    else:
        raise SimulationError(f"unknown sprite shape {shape!r}")
    return sprite, alpha


@dataclass
class Scene:
    """One scene in the linear (photon) domain.

    ``static`` holds the background-only pair; ``target`` and ``others`` are
    ``(blurred, sharp, gt_mask)`` triples.
    """

    background: np.ndarray
    static: tuple[np.ndarray, np.ndarray]
    target: tuple[np.ndarray, np.ndarray, np.ndarray]
    others: list = field(default_factory=list)
    scripts: list = field(default_factory=list)


def random_script(rng: np.random.Generator, background: np.ndarray, sprite_size: int,
                  frames: int, shape: str = "square", travel: float | None = None,
                  rotation: float = 0.0) -> MotionScript:
    h, w = background.shape[:2]
    sprite, alpha = make_sprite(rng, sprite_size, shape, background.shape[2])
    travel = float(rng.uniform(15, 40)) if travel is None else float(travel)
    theta = rng.uniform(0, 2 * np.pi)
    dx, dy = travel * np.cos(theta), travel * np.sin(theta)
    pad = sprite_size * 0.75
    lo_x, hi_x = pad + max(0, -dx), w - 1 - sprite_size - pad - max(0, dx)
    lo_y, hi_y = pad + max(0, -dy), h - 1 - sprite_size - pad - max(0, dy)
    if hi_x <= lo_x or hi_y <= lo_y:
        raise SimulationError("frame too small for the requested sprite motion")
    origin = (float(np.round(rng.uniform(lo_x, hi_x))), float(np.round(rng.uniform(lo_y, hi_y))))
    return MotionScript(background, sprite, alpha, origin, linear_motion(frames, dx, dy, rotation))


def make_scene(rng: np.random.Generator, width: int = 512, height: int = 384, n_others: int = 3,
               frames: int = 12, sprite_size: int = 64, shape: str = "square",
               travel: float | None = None, background: np.ndarray | None = None) -> Scene:
    bg = textured_background(rng, height, width) if background is None else as_image(background)
    scripts = [random_script(rng, bg, sprite_size, frames, shape, travel) for _ in range(1 + n_others)]
    pairs = [simulate_pair(s) for s in scripts]
    return Scene(bg, (bg.copy(), bg.copy()), pairs[0], pairs[1:], scripts)


@dataclass
class Degradation:
    """Ground-truth parameters injected into one simulated capture."""

    cast_sharp: calib.ColorCalibration
    cast_blur: calib.ColorCalibration
    gains: tuple[float, float, float]
    misalignment: tuple[float, float]
    pattern: str = "RGGB"

    def to_dict(self) -> dict:
        return {
            "cast_sharp": self.cast_sharp.to_dict(),
            "cast_blur": self.cast_blur.to_dict(),
            "gains": list(self.gains),
            "misalignment": list(self.misalignment),
            "pattern": self.pattern,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Degradation":
        try:
            return cls(calib.ColorCalibration.from_dict(d["cast_sharp"]),
                       calib.ColorCalibration.from_dict(d["cast_blur"]),
                       tuple(float(g) for g in d["gains"]),
                       tuple(float(m) for m in d["misalignment"]),
                       str(d.get("pattern", "RGGB")))
        except (KeyError, TypeError, ValueError) as e:
            raise SimulationError(f"malformed degradation record: {e}") from e


def random_degradation(rng: np.random.Generator, width: int, height: int,
                       grid: tuple[int, int] = (10, 8), patch_size: int = 2,
                       misalignment: tuple[float, float] = (3.0, 0.0),
                       pattern: str = "RGGB") -> Degradation:
    sites = calib.target_sites((height, width), grid[0], grid[1], patch_size, pattern)
    cast_s = calib.random_calibration(rng, width, height, anchor=sites)
    cast_b = calib.random_calibration(rng, width, height, anchor=sites)
    gains = tuple(float(g) for g in rng.uniform(0.8, 1.25, size=3))
    return Degradation(cast_s, cast_b, gains, tuple(misalignment), pattern)


def capture(img: np.ndarray, cast: calib.ColorCalibration, pattern: str = "RGGB",
            gains=None, misalignment=None) -> BayerImage:
    """Photon-domain RGB -> degraded RAW mosaic for one camera."""
    from .imgcore import mosaic
    x = as_image(img)
    if misalignment is not None and any(misalignment):
        x, _ = inject_misalignment(x, *misalignment)
    raw = mosaic(x, pattern)
    raw = inject_color_cast(raw, cast)
    if gains is not None:
        raw = inject_brightness(raw, gains)
    return raw


def flat_field(width: int, height: int, level: float = 0.8) -> np.ndarray:
    return np.full((height, width, 3), float(level))


def footprint_iou(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a) > 0.5
    b = np.asarray(b) > 0.5
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum() / union)

