"""Image file I/O: 16-bit PNG, little-endian PFM, and Bayer sidecar metadata.

Everything in memory is float in ``[0, 1]``; integer encodings exist only at
the file boundary.  PFM stores float32, so values that are float32-exact
round-trip bit-identically.
"""
from __future__ import annotations

import os
import re
from pathlib import Path

import cv2
import numpy as np

from .imgcore import BAYER_PATTERNS, BayerImage, FlowField, ImageError, as_image, as_mask

SIDECAR_SUFFIX = ".meta"


class ImageFormatError(ImageError):
    """Malformed or unsupported image file."""


def _format_of(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
    else:
        fmt = Path(path).suffix.lower().lstrip(".")
    if fmt not in ("png", "pfm"):
        raise ImageFormatError(f"unsupported format {fmt!r} (use png or pfm)")
    return fmt


# --- PFM -------------------------------------------------------------------

def write_pfm(path, data: np.ndarray) -> None:
    a = np.asarray(data, dtype=np.float32)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.shape[2] not in (1, 3):
        raise ImageFormatError(f"PFM holds 1 or 3 planes, got {a.shape[2]}")
    header = "PF" if a.shape[2] == 3 else "Pf"
    h, w = a.shape[:2]
    with open(path, "wb") as f:
        f.write(f"{header}\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM rows run bottom to top
        f.write(np.ascontiguousarray(a[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    m = re.match(rb"(PF|Pf)\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if not m:
        raise ImageFormatError(f"{path}: not a PFM file")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    scale = float(m.group(4))
    dtype = "<f4" if scale < 0 else ">f4"
    count = w * h * channels
    body = raw[m.end():]
    if len(body) < 4 * count:
        raise ImageFormatError(f"{path}: truncated PFM ({len(body)} of {4 * count} bytes)")
    a = np.frombuffer(body[:4 * count], dtype=dtype).reshape(h, w, channels)[::-1]
    return a.astype(np.float64)


# --- PNG -------------------------------------------------------------------

def write_png16(path, data: np.ndarray) -> None:
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    q = np.round(np.clip(a, 0.0, 1.0) * 65535.0).astype(np.uint16)
    if q.ndim == 3:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR if q.shape[2] == 3 else cv2.COLOR_RGBA2BGRA)
    if not cv2.imwrite(str(path), q):
        raise ImageFormatError(f"{path}: could not write PNG")


def read_png(path) -> np.ndarray:
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path, "rb") as f:
        buf = np.frombuffer(f.read(), dtype=np.uint8)
    q = cv2.imdecode(buf, cv2.IMREAD_UNCHANGED) if buf.size else None
    if q is None:
        raise ImageFormatError(f"{path}: unreadable or truncated PNG")
    if q.ndim == 3:
        q = cv2.cvtColor(q, cv2.COLOR_BGR2RGB if q.shape[2] == 3 else cv2.COLOR_BGRA2RGBA)
    peak = 65535.0 if q.dtype == np.uint16 else 255.0
    return q.astype(np.float64) / peak


def write_mask_png(path, mask: np.ndarray) -> None:
    """8-bit mask with values {0, 255}."""
    m = (np.asarray(mask) > 0.5).astype(np.uint8) * 255
    if not cv2.imwrite(str(path), m):
        raise ImageFormatError(f"{path}: could not write PNG")


# --- sidecar ---------------------------------------------------------------

def write_sidecar(path, meta: dict) -> None:
    with open(str(path) + SIDECAR_SUFFIX, "w") as f:
        for key, value in meta.items():
            f.write(f"{key}={value}\n")


def read_sidecar(path) -> dict | None:
    p = str(path) + SIDECAR_SUFFIX
    if not os.path.exists(p):
        return None
    meta = {}
    with open(p) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ImageFormatError(f"{p}: bad sidecar line {line!r}")
            key, value = line.split("=", 1)
            meta[key.strip()] = value.strip()
    return meta


# --- public ----------------------------------------------------------------

def save_image(img, path, fmt: str | None = None) -> None:
    """Write an image or a :class:`BayerImage` as 16-bit PNG or PFM."""
    fmt = _format_of(path, fmt)
    if isinstance(img, BayerImage):
        data = img.data
        write_sidecar(path, {"pattern": img.pattern, "black_level": img.black_level,
                             "white_level": img.white_level})
    else:
        data = as_image(img)
        if fmt == "pfm" and data.shape[2] == 4:
            raise ImageFormatError("PFM cannot hold 4 channels")
    if fmt == "pfm":
        write_pfm(path, data)
    else:
        write_png16(path, data)


def load_image(path, fmt: str | None = None):
    """Read an image; a sidecar with a ``pattern`` key yields a BayerImage."""
    fmt = _format_of(path, fmt)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    data = read_pfm(path) if fmt == "pfm" else read_png(path)
    meta = read_sidecar(path)
    if meta and "pattern" in meta:
        if data.ndim == 3 and data.shape[2] != 1:
            raise ImageFormatError(f"{path}: Bayer file must have one channel, found {data.shape[2]}")
        if meta["pattern"] not in BAYER_PATTERNS:
            raise ImageFormatError(f"{path}: bad Bayer pattern {meta['pattern']!r}")
        plane = data[:, :, 0] if data.ndim == 3 else data
        return BayerImage(plane, meta["pattern"], float(meta.get("black_level", 0.0)),
                          float(meta.get("white_level", 65535.0)))
    return as_image(data)


def save_flow(flow: FlowField, path) -> None:
    """Flow as a 3-plane PFM: u, v, and confidence (zero when absent)."""
    conf = flow.confidence if flow.confidence is not None else np.zeros_like(flow.u)
    write_pfm(path, np.stack([flow.u, flow.v, conf], axis=2))


def load_flow(path) -> FlowField:
    a = read_pfm(path)
    if a.shape[2] != 3:
        raise ImageFormatError(f"{path}: flow PFM needs 3 planes")
    return FlowField(a[:, :, 0], a[:, :, 1], a[:, :, 2])


def load_mask(path) -> np.ndarray:
    """Read a mask file as a 2-D array in ``[0, 1]``."""
    m = load_image(path)
    if isinstance(m, BayerImage):
        raise ImageFormatError(f"{path}: expected a mask, found a Bayer image")
    return as_mask(m[:, :, 0] if m.shape[2] == 1 else m[:, :, :3].mean(axis=2))
