"""Scene manifests: JSON files naming the captures of one scene by role.

Paths are relative to the manifest's directory.  Schema (version 1)::

    {
      "schema_version": 1,
      "width": 1024, "height": 768, "pattern": "RGGB",
      "lightbox": {"sharp": "lightbox_S.pfm", "blur": "lightbox_B.pfm"},
      "static":   {"sharp": "static_S.pfm",   "blur": "static_B.pfm"},
      "target":   {"sharp": "target_S.pfm",   "blur": "target_B.pfm", "mask": "target_mask.png"},
      "pairs":    [{"sharp": ..., "blur": ..., "mask": ...}, ...],
      "truth":    {"degradation": "degradation.json", "static_linear": "truth_static.pfm"}
    }

``lightbox``, ``pairs``, masks and ``truth`` are optional.  Processed scenes
written by the pipeline use the same layout with RGB images.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .imgcore import ImageError

SCHEMA_VERSION = 1


class ManifestError(ImageError):
    pass


@dataclass
class PairEntry:
    sharp: str
    blur: str
    mask: str | None = None

    def to_dict(self, root: str) -> dict:
        d = {"sharp": _rel(self.sharp, root), "blur": _rel(self.blur, root)}
        if self.mask is not None:
            d["mask"] = _rel(self.mask, root)
        return d


@dataclass
class SceneManifest:
    path: str
    width: int
    height: int
    static: PairEntry
    target: PairEntry
    pairs: list = field(default_factory=list)
    lightbox: PairEntry | None = None
    pattern: str | None = None
    truth: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def root(self) -> str:
        return os.path.dirname(os.path.abspath(self.path))

    def all_pairs(self) -> list[tuple[str, PairEntry]]:
        """``(name, entry)`` for the static, target and remaining pairs."""
        out = [("static", self.static), ("target", self.target)]
        out += [(f"pair{i}", p) for i, p in enumerate(self.pairs)]
        return out

    def to_dict(self) -> dict:
        root = self.root
        d = {"schema_version": SCHEMA_VERSION, "width": self.width, "height": self.height,
             "static": self.static.to_dict(root), "target": self.target.to_dict(root),
             "pairs": [p.to_dict(root) for p in self.pairs]}
        if self.pattern is not None:
            d["pattern"] = self.pattern
        if self.lightbox is not None:
            d["lightbox"] = self.lightbox.to_dict(root)
        if self.truth:
            d["truth"] = {k: _rel(v, root) for k, v in self.truth.items()}
        d.update(self.extra)
        return d

    def save(self) -> None:
        with open(self.path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def _rel(p: str, root: str) -> str:
    return os.path.relpath(p, root)


def _pair(d, root: str, what: str, need_mask: bool = False) -> PairEntry:
    if not isinstance(d, dict) or "sharp" not in d or "blur" not in d:
        raise ManifestError(f"manifest entry {what!r} needs 'sharp' and 'blur'")
    mask = d.get("mask")
    if need_mask and mask is None:
        raise ManifestError(f"manifest entry {what!r} needs a 'mask'")
    j = lambda p: p if p is None else os.path.normpath(os.path.join(root, p))
    return PairEntry(j(d["sharp"]), j(d["blur"]), j(mask))


def load_manifest(path) -> SceneManifest:
    path = str(path)
    if not os.path.exists(path):
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        with open(path) as f:
            d = json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from None
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ManifestError(f"{path}: unsupported schema_version {d.get('schema_version')!r}")
    root = os.path.dirname(os.path.abspath(path))
    for key in ("width", "height", "static", "target"):
        if key not in d:
            raise ManifestError(f"{path}: missing {key!r}")
    known = {"schema_version", "width", "height", "static", "target", "pairs", "lightbox",
             "pattern", "truth"}
    return SceneManifest(
        path=path, width=int(d["width"]), height=int(d["height"]),
        static=_pair(d["static"], root, "static"), target=_pair(d["target"], root, "target"),
        pairs=[_pair(p, root, f"pairs[{i}]") for i, p in enumerate(d.get("pairs", []))],
        lightbox=_pair(d["lightbox"], root, "lightbox") if "lightbox" in d else None,
        pattern=d.get("pattern"),
        truth={k: os.path.normpath(os.path.join(root, v)) for k, v in d.get("truth", {}).items()},
        extra={k: v for k, v in d.items() if k not in known},
    )


def load_json(path) -> dict:
    if not os.path.exists(path):
        raise FileNotFoundError(f"file not found: {path}")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise ManifestError(f"{path}: invalid JSON ({e})") from None
