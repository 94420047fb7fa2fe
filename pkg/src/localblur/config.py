"""Run configuration: built-in defaults, an optional TOML file, then flags.

Recognised sections and keys (all optional)::

    [calib]     grid = [10, 8]      patch_size = 2
    [isp]       wb_gains = [1, 1, 1]  color_matrix = [[...]]  gamma = 2.2
                demosaic = "malvar"   stages = ["demosaic", "white_balance", "color_map", "gamma"]
    [align]     levels = 3   block = 64   step = 32
    [lbfmg]     k_max, rho, t_bg, match_sigma, var_floor, var_init, var_max,
                detect_shadows, shadow_tau, open_size
    [photometric] gain_source = "lightbox"   # lightbox | static | pair
    [metrics]   radius = 8   mask_align = false
    [sampler]   size = 256   p_blur = 0.5
"""
from __future__ import annotations

import copy
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULTS = {
    "calib": {"grid": [10, 8], "patch_size": 2},
    "isp": {"wb_gains": [1.0, 1.0, 1.0],
            "color_matrix": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            "gamma": 2.2, "demosaic": "malvar",
            "stages": ["demosaic", "white_balance", "color_map", "gamma"]},
    "align": {"levels": 3, "block": 64, "step": 32},
    "lbfmg": {"k_max": 5, "rho": 0.05, "t_bg": 0.9, "match_sigma": 2.5,
              "var_floor": (4 / 255) ** 2, "var_init": 3 * (4 / 255) ** 2, "var_max": 0.25,
              "detect_shadows": True, "shadow_tau": 0.5, "open_size": 5},
    "photometric": {"gain_source": "lightbox"},
    "metrics": {"radius": 8, "mask_align": False},
    "sampler": {"size": 256, "p_blur": 0.5},
}

GAIN_SOURCES = ("lightbox", "static", "pair")


class ConfigError(ValueError):
    pass


def _check(cfg: dict) -> dict:
    for section, values in cfg.items():
        if section not in DEFAULTS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key in values:
            if key not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
    src = cfg.get("photometric", {}).get("gain_source")
    if src is not None and src not in GAIN_SOURCES:
        raise ConfigError(f"gain_source must be one of {GAIN_SOURCES}, got {src!r}")
    return cfg


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for section, values in override.items():
        out.setdefault(section, {}).update(values)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path, "rb") as f:
                user = tomllib.load(f)
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{path}: {e}") from None
        cfg = merge(cfg, _check(user))
    if overrides:
        cfg = merge(cfg, _check(overrides))
    return cfg


def parse_assignment(text: str) -> tuple[str, str, object]:
    """``section.key=value`` with the value parsed as a TOML literal."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    lhs, rhs = text.split("=", 1)
    section, key = lhs.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {rhs.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = rhs.strip()
    return section, key, value
