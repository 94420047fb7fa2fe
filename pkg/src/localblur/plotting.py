"""PNG figures for CLI reports (``--figures DIR``)."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 110


def _save(fig, out_dir, name) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def _show(ax, img, title):
    a = np.clip(np.asarray(img), 0, 1)
    if a.ndim == 3 and a.shape[2] == 1:
        a = a[:, :, 0]
    ax.imshow(a, cmap="gray" if a.ndim == 2 else None, vmin=0, vmax=1)
    ax.set_title(title, fontsize=9)
    ax.set_axis_off()


def pipeline_figures(report: dict, out_dir, flow=None, sharp=None, aligned=None) -> list[str]:
    paths = []
    rows = report["pairs"]
    names = [r["name"] for r in rows]
    x = np.arange(len(rows))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.2))
    a1.bar(x - 0.2, [100 * r["delta_L_before"] for r in rows], 0.4, label="before")
    a1.bar(x + 0.2, [100 * r["delta_L_after"] for r in rows], 0.4, label="after")
    a1.set_xticks(x, names, rotation=30)
    a1.set_ylabel("ΔL (%)")
    a1.legend(frameon=False)
    a2.bar(x - 0.2, [r["psnr_before"] for r in rows], 0.4, label="unaligned")
    a2.bar(x + 0.2, [r["psnr_after"] for r in rows], 0.4, label="aligned")
    a2.set_xticks(x, names, rotation=30)
    a2.set_ylabel("PSNR (dB)")
    a2.legend(frameon=False)
    paths.append(_save(fig, out_dir, "pipeline_pairs.png"))

    if flow is not None:
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.2))
        for ax, comp, label in ((a1, flow.u, "u (px)"), (a2, flow.v, "v (px)")):
            im = ax.imshow(comp, cmap="coolwarm")
            ax.set_title(label, fontsize=9)
            ax.set_axis_off()
            fig.colorbar(im, ax=ax, shrink=0.8)
        paths.append(_save(fig, out_dir, "pipeline_flow.png"))
    if sharp is not None and aligned is not None:
        fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
        _show(axes[0], sharp, "sharp")
        _show(axes[1], aligned, "blurred, aligned")
        _show(axes[2], np.abs(np.asarray(sharp) - np.asarray(aligned)).mean(axis=2) * 4, "|diff| x4")
        paths.append(_save(fig, out_dir, "pipeline_static.png"))
    return paths


def metrics_figure(report: dict, out_dir) -> list[str]:
    rows = report["pairs"]
    if not rows:
        return []
    cols = ("PSNR", "PSNR_w", "PSNR_a")
    x = np.arange(len(rows))
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3.2))
    for i, c in enumerate(cols):
        a1.bar(x + (i - 1) * 0.27, [r[c] for r in rows], 0.27, label=c)
    a1.set_ylabel("dB")
    a1.legend(frameon=False, fontsize=8)
    for i, c in enumerate(("SSIM", "SSIM_w")):
        a2.bar(x + (i - 0.5) * 0.4, [r[c] for r in rows], 0.4, label=c)
    a2.legend(frameon=False, fontsize=8)
    for ax in (a1, a2):
        ax.set_xticks(x, [r.get("id", str(i)) for i, r in enumerate(rows)], rotation=30)
    return [_save(fig, out_dir, "metrics.png")]


def mask_figure(image, mask, out_dir, name: str = "mask.png", gt=None) -> list[str]:
    n = 2 if gt is None else 3
    fig, axes = plt.subplots(1, n, figsize=(3.6 * n, 3.2))
    _show(axes[0], image, "image")
    _show(axes[1], mask, "mask")
    if gt is not None:
        _show(axes[2], gt, "ground truth")
    return [_save(fig, out_dir, name)]


def synth_figure(before, after, mask, out_dir) -> list[str]:
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    _show(axes[0], before, "input")
    _show(axes[1], after, "local blur")
    _show(axes[2], mask, "replaced region")
    return [_save(fig, out_dir, "synth_blur.png")]
