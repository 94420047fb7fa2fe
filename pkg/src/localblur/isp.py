"""Bayer RAW to RGB: demosaic, white balance, colour matrix, gamma."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.ndimage import convolve

from .imgcore import BayerImage, ImageError, as_image

STAGE_ORDER = ("demosaic", "white_balance", "color_map", "gamma")

# gradient-corrected bilinear kernels (Malvar, He & Cutler 2004), scaled by 1/8
_G_AT_RB = np.array([[0, 0, -1, 0, 0],
                     [0, 0, 2, 0, 0],
                     [-1, 2, 4, 2, -1],
                     [0, 0, 2, 0, 0],
                     [0, 0, -1, 0, 0]], dtype=np.float64) / 8
_ROW_NEIGHBOUR = np.array([[0, 0, 0.5, 0, 0],
                           [0, -1, 0, -1, 0],
                           [-1, 4, 5, 4, -1],
                           [0, -1, 0, -1, 0],
                           [0, 0, 0.5, 0, 0]], dtype=np.float64) / 8
_COL_NEIGHBOUR = _ROW_NEIGHBOUR.T
_DIAGONAL = np.array([[0, 0, -1.5, 0, 0],
                      [0, 2, 0, 2, 0],
                      [-1.5, 0, 6, 0, -1.5],
                      [0, 2, 0, 2, 0],
                      [0, 0, -1.5, 0, 0]], dtype=np.float64) / 8


def demosaic_malvar(raw: BayerImage) -> np.ndarray:
    """Gradient-corrected bilinear demosaic; native samples pass through."""
    if not isinstance(raw, BayerImage):
        raise ImageError("demosaic expects a BayerImage")
    d = raw.data
    chan = raw.channel_index()
    # 'mirror' keeps the CFA phase across the border
    g_rb = convolve(d, _G_AT_RB, mode="mirror")
    row = convolve(d, _ROW_NEIGHBOUR, mode="mirror")
    col = convolve(d, _COL_NEIGHBOUR, mode="mirror")
    diag = convolve(d, _DIAGONAL, mode="mirror")

    is_r, is_g, is_b = chan == 0, chan == 1, chan == 2
    row_has_r = np.any(is_r, axis=1, keepdims=True)
    out = np.empty(d.shape + (3,))
    out[:, :, 1] = np.where(is_g, d, g_rb)
    out[:, :, 0] = np.where(is_r, d, np.where(is_b, diag, np.where(row_has_r, row, col)))
    out[:, :, 2] = np.where(is_b, d, np.where(is_r, diag, np.where(row_has_r, col, row)))
    return out


DEMOSAICERS: dict[str, Callable[[BayerImage], np.ndarray]] = {"malvar": demosaic_malvar}


def demosaic(raw: BayerImage, method: str = "malvar") -> np.ndarray:
    try:
        fn = DEMOSAICERS[method]
    except KeyError:
        raise ValueError(f"unknown demosaic method {method!r}") from None
    return fn(raw)


def white_balance(img, gains) -> np.ndarray:
    g = np.asarray(gains, dtype=np.float64)
    if g.shape != (3,) or np.any(g <= 0):
        raise ValueError(f"white balance needs three positive gains, got {gains}")
    a = as_image(img)
    out = a.copy()
    out[:, :, :3] *= g
    return out


def color_map(img, matrix) -> np.ndarray:
    """Per-pixel ``M @ rgb``, clamped to ``[0, 1]``."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError("colour matrix must be 3x3")
    a = as_image(img)
    out = a.copy()
    out[:, :, :3] = np.clip(np.einsum("ij,yxj->yxi", m, a[:, :, :3]), 0.0, 1.0)
    return out


def gamma(img, g: float = 2.2) -> np.ndarray:
    """Power law ``x ** (1 / g)`` on non-negative samples."""
    if not g > 0:
        raise ValueError(f"gamma must be positive, got {g}")
    a = as_image(img)
    return np.power(np.clip(a, 0.0, None), 1.0 / g)


@dataclass
class IspConfig:
    wb_gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    color_matrix: np.ndarray = field(default_factory=lambda: np.eye(3))
    gamma: float = 2.2
    demosaic: str = "malvar"
    stages: tuple[str, ...] = STAGE_ORDER

    @classmethod
    def from_mapping(cls, d: dict | None) -> "IspConfig":
        d = dict(d or {})
        cfg = cls()
        if "wb_gains" in d:
            cfg.wb_gains = tuple(float(v) for v in d["wb_gains"])
        if "color_matrix" in d:
            cfg.color_matrix = np.asarray(d["color_matrix"], dtype=np.float64)
        if "gamma" in d:
            cfg.gamma = float(d["gamma"])
        if "demosaic" in d:
            cfg.demosaic = str(d["demosaic"])
        if "stages" in d:
            cfg.stages = tuple(d["stages"])
        return cfg


class IspPipeline:
    """Runs the enabled stages; their relative order is fixed."""

    def __init__(self, config: IspConfig | None = None):
        self.config = config or IspConfig()
        stages = tuple(self.config.stages)
        unknown = [s for s in stages if s not in STAGE_ORDER]
        if unknown:
            raise ValueError(f"unknown ISP stages {unknown}")
        if list(stages) != sorted(stages, key=STAGE_ORDER.index) or len(set(stages)) != len(stages):
            raise ValueError(f"ISP stages must follow {' -> '.join(STAGE_ORDER)}, got {stages}")
        if "demosaic" not in stages:
            raise ValueError("ISP pipeline needs a demosaic stage")
        self.stages = stages

    def __call__(self, raw: BayerImage) -> np.ndarray:
        cfg = self.config
        img = demosaic(raw, cfg.demosaic)
        for stage in self.stages[1:]:
            if stage == "white_balance":
                img = white_balance(img, cfg.wb_gains)
            elif stage == "color_map":
                img = color_map(img, cfg.color_matrix)
            elif stage == "gamma":
                img = gamma(img, cfg.gamma)
        return img
