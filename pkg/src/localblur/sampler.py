"""Blur-aware patch cropping and flip augmentation.

Every draw is a pure function of ``(seed, index)``: a Philox counter-based
generator is keyed from the pair, so draws can be made in any order or from
many threads and still reproduce.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from .imgcore import ImageError, as_mask

PATCH_SIZE = 256
BLUR_BRANCH_P = 0.5
FLIP_P = 0.5

UNIFORM, BLUR = "uniform", "blur"


@dataclass(frozen=True)
class PatchSpec:
    x: int
    y: int
    size: int = PATCH_SIZE
    flip_h: bool = False
    flip_v: bool = False
    branch: str = UNIFORM
    ctr: tuple[int, int] | None = None  # (x, y) chosen on the blur branch

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ctr"] = list(self.ctr) if self.ctr is not None else None
        return d

    def contains(self, x: int, y: int) -> bool:
        return self.x <= x < self.x + self.size and self.y <= y < self.y + self.size


def rng_for(seed: int, index: int = 0, stream: int = 0) -> np.random.Generator:
    """Independent generator for draw ``index`` of ``seed``."""
    ss = np.random.SeedSequence([int(seed), int(index), int(stream)])
    return np.random.Generator(np.random.Philox(ss))


class _MaskIndex:
    """Flat indices of mask-positive pixels, cached per mask."""

    def __init__(self, mask):
        m = as_mask(mask)
        self.shape = m.shape
        self.flat = np.flatnonzero(m > 0.5)


def _clamp(c: int, size: int, extent: int) -> int:
    return int(min(max(c - size // 2, 0), extent - size))


def bapc_sample(img_dims, mask, rng_seed: int, index: int = 0, size: int = PATCH_SIZE,
                p_blur: float = BLUR_BRANCH_P) -> PatchSpec:
    """One blur-aware crop.

    ``img_dims`` is ``(width, height)``.  With probability ``p_blur`` the patch
    is centred on a random mask-positive pixel (clamped into the frame);
    otherwise its top-left corner is uniform.  Empty masks always take the
    uniform branch.
    """
    w, h = int(img_dims[0]), int(img_dims[1])
    if w < size or h < size:
        raise ImageError(f"image {w}x{h} is smaller than the {size}px patch")
    idx = mask if isinstance(mask, _MaskIndex) else _MaskIndex(mask)
    if idx.shape != (h, w):
        raise ImageError(f"mask {idx.shape[::-1]} does not match image {w}x{h}")
    rng = rng_for(rng_seed, index)
    want_blur = rng.random() < p_blur
    pick = rng.random()
    if want_blur and idx.flat.size:
        flat = idx.flat[min(int(pick * idx.flat.size), idx.flat.size - 1)]
        cy, cx = divmod(int(flat), w)
        return PatchSpec(_clamp(cx, size, w), _clamp(cy, size, h), size, branch=BLUR, ctr=(cx, cy))
    ux, uy = rng.integers(0, w - size + 1), rng.integers(0, h - size + 1)
    return PatchSpec(int(ux), int(uy), size)


def bapc_batch(img_dims, mask, rng_seed: int, count: int, start: int = 0,
               size: int = PATCH_SIZE) -> list[PatchSpec]:
    idx = _MaskIndex(mask)
    return [bapc_sample(img_dims, idx, rng_seed, start + i, size) for i in range(count)]


def augment(spec: PatchSpec, rng: np.random.Generator) -> PatchSpec:
    """Set horizontal and vertical flips independently with probability 0.5."""
    fh, fv = rng.random(2) < FLIP_P
    return replace(spec, flip_h=bool(fh), flip_v=bool(fv))


def extract(img: np.ndarray, spec: PatchSpec) -> np.ndarray:
    a = np.asarray(img)
    h, w = a.shape[:2]
    if spec.x < 0 or spec.y < 0 or spec.x + spec.size > w or spec.y + spec.size > h:
        raise ImageError("patch outside the image")
    p = a[spec.y:spec.y + spec.size, spec.x:spec.x + spec.size]
    if spec.flip_h:
        p = p[:, ::-1]
    if spec.flip_v:
        p = p[::-1]
    return p.copy()


def contains_blur(mask: np.ndarray, spec: PatchSpec) -> bool:
    m = np.asarray(mask)
    return bool(np.any(m[spec.y:spec.y + spec.size, spec.x:spec.x + spec.size] > 0.5))
