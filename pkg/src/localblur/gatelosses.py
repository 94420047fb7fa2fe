"""Gate block forward transform, training losses, and gradient checks.

The gate splits a 4-channel feature map into a 3-channel latent and a mask
logit; the residual ``latent * sigmoid(logit)`` is added to the blurred
input, so pixels the mask rejects pass through untouched.

Losses follow the usual per-element normalisation.  The multi-scale
frequency term is

    MSFR = sum_k (1 / t_k) * sum |Re D_k| + |Im D_k|,   D_k = DFT(S_k - S_hat_k)

with an unnormalised 2-D DFT per channel and ``t_k = 2 * H_k * W_k * C``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .imgcore import ImageError, as_image, overlap_views, pyramid, same_shape
from .metrics import ssim_map

MSFR_LEVELS = 3
LOGIT_CLIP = 30.0  # keeps sigmoid strictly inside (0, 1) in float64
SHIFTS = tuple((k, l) for l in (-1, 0, 1) for k in (-1, 0, 1))


@dataclass(frozen=True)
class LossWeights:
    mask: float = 0.01   # lambda 1
    mae: float = 1.0     # lambda 2
    ssim: float = 1.0    # lambda 3
    msfr: float = 0.1    # lambda 4

    def __post_init__(self):
        if min(self.mask, self.mae, self.ssim, self.msfr) < 0:
            raise ValueError("loss weights must be non-negative")


# --- gate block ------------------------------------------------------------

def sigmoid(x):
    return expit(np.clip(x, -LOGIT_CLIP, LOGIT_CLIP))


def gate_forward(feat, blurred_scale) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(pred_sharp, pred_mask)`` for one scale."""
    f = np.asarray(feat, dtype=np.float64)
    b = as_image(blurred_scale)
    if f.ndim != 3 or f.shape[2] != 4:
        raise ImageError(f"gate needs a 4-channel feature map, got shape {f.shape}")
    if f.shape[:2] != b.shape[:2] or b.shape[2] != 3:
        raise ImageError(f"feature map {f.shape} does not match blurred image {b.shape}")
    if not np.all(np.isfinite(f)):
        raise ImageError("feature map has non-finite values")
    m = sigmoid(f[:, :, 3])
    return b + f[:, :, :3] * m[:, :, None], m


# --- plain losses ----------------------------------------------------------

def _pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    same_shape(a, b)
    return a, b


def loss_mask(m_hat, m) -> float:
    a, b = _pair(m_hat, m)
    return float(np.mean((a - b) ** 2))


loss_mse = loss_mask


def loss_mae(S_hat, S) -> float:
    a, b = _pair(S_hat, S)
    return float(np.mean(np.abs(a - b)))


def loss_ssim(S_hat, S) -> float:
    return -float(ssim_map(S, S_hat).mean())


def _levels(x, levels: int = MSFR_LEVELS) -> list[np.ndarray]:
    if isinstance(x, (list, tuple)):
        return [as_image(v) for v in x]
    return pyramid(as_image(x), levels)


def _spectrum_l1(a: np.ndarray, b: np.ndarray) -> float:
    d = np.fft.fft2(b - a, axes=(0, 1))
    return float(np.abs(d.real).sum() + np.abs(d.imag).sum())


def msfr_norm(shape) -> int:
    h, w, c = shape
    return 2 * h * w * c


def loss_msfr(S_hat, S, levels: int = MSFR_LEVELS) -> float:
    """Multi-scale frequency loss; accepts images or explicit pyramids."""
    ph, ps = _levels(S_hat, levels), _levels(S, levels)
    if len(ph) != len(ps):
        raise ImageError(f"pyramids differ in depth: {len(ph)} vs {len(ps)}")
    total = 0.0
    for a, b in zip(ph, ps):
        same_shape(a, b, "pyramid levels")
        total += _spectrum_l1(a, b) / msfr_norm(a.shape)
    return total


# --- analytic gradients (w.r.t. S_hat) -------------------------------------

def grad_mse(S_hat, S) -> np.ndarray:
    a, b = _pair(S_hat, S)
    return 2.0 * (a - b) / a.size


def grad_mae(S_hat, S) -> np.ndarray:
    a, b = _pair(S_hat, S)
    return np.sign(a - b) / a.size


def _downsample2_adjoint(g: np.ndarray, shape) -> np.ndarray:
    out = np.zeros(shape)
    h2, w2 = g.shape[:2]
    up = 0.25 * np.repeat(np.repeat(g, 2, axis=0), 2, axis=1)
    out[:2 * h2, :2 * w2] = up
    return out


def grad_msfr(S_hat, S, levels: int = MSFR_LEVELS) -> np.ndarray:
    """Gradient of ``loss_msfr`` for full-resolution images.

    Per level, with ``D = DFT(S - S_hat)``,
    ``dL/dS_hat = -Re(DFT(sgn Re D - i sgn Im D)) / t``; coarser levels are
    pulled back through the adjoint of the 2x2 average.
    """
    a, b = _pair(as_image(S_hat), as_image(S))
    pa, pb = pyramid(a, levels), pyramid(b, levels)
    grads = []
    for x, y in zip(pa, pb):
        d = np.fft.fft2(y - x, axes=(0, 1))
        z = np.sign(d.real) - 1j * np.sign(d.imag)
        grads.append(-np.fft.fft2(z, axes=(0, 1)).real / msfr_norm(x.shape))
    g = grads[-1]
    for lvl in range(len(grads) - 2, -1, -1):
        g = grads[lvl] + _downsample2_adjoint(g, pa[lvl].shape)
    return g


# --- shift-invariant wrapper -----------------------------------------------

def _crop_pair(pred, ref, k, l):
    if isinstance(pred, (list, tuple)):
        crops = [overlap_views(p, r, k, l) for p, r in zip(pred, ref)]
        return [c[0] for c in crops], [c[1] for c in crops]
    return overlap_views(np.asarray(pred, dtype=np.float64), np.asarray(ref, dtype=np.float64), k, l)


def shift_invariant(loss_fn: Callable, S_hat, S, return_shift: bool = False):
    """Minimum of ``loss_fn`` over the nine shifts of ``S_hat`` by at most one pixel.

    Each candidate is evaluated on the overlap only, so every loss must be
    normalised per element.  Pyramids (lists) get the same ``(k, l)`` at every
    level.
    """
    if isinstance(S_hat, (list, tuple)):
        if len(S_hat) != len(S):
            raise ImageError("pyramids differ in depth")
        small = min(min(p.shape[:2]) for p in S_hat)
    else:
        small = min(np.shape(S_hat)[:2])
    if small < 3:
        raise ImageError("shift-invariant losses need images of at least 3x3")
    best, best_shift = np.inf, (0, 0)
    for k, l in sorted(SHIFTS, key=lambda s: (abs(s[0]) + abs(s[1]), s)):
        p, r = _crop_pair(S_hat, S, k, l)
        v = loss_fn(p, r)
        if v < best:
            best, best_shift = v, (k, l)
    return (best, best_shift) if return_shift else best


# --- total loss ------------------------------------------------------------

@dataclass
class LossBreakdown:
    terms: dict
    weights: dict
    weighted: dict
    total: float
    shifts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["shifts"] = {k: [list(s) for s in v] for k, v in self.shifts.items()}
        return d


def total_loss(pred_pyr: Sequence, gt_pyr: Sequence, m_hat, m,
               weights: LossWeights | None = None) -> LossBreakdown:
    """Weighted sum of the four shift-invariant terms.

    MAE and SSIM are averaged over scales with equal weight; MSFR already
    sums its levels.  The mask term compares full-resolution masks.
    """
    w = weights or LossWeights()
    pred_pyr = [as_image(p) for p in pred_pyr]
    gt_pyr = [as_image(g) for g in gt_pyr]
    if len(pred_pyr) != len(gt_pyr) or not pred_pyr:
        raise ImageError("prediction and ground-truth pyramids must have the same non-zero depth")
    lm, sm = shift_invariant(loss_mask, m_hat, m, return_shift=True)
    mae = [shift_invariant(loss_mae, p, g, return_shift=True) for p, g in zip(pred_pyr, gt_pyr)]
    ss = [shift_invariant(loss_ssim, p, g, return_shift=True) for p, g in zip(pred_pyr, gt_pyr)]
    msfr, sf = shift_invariant(loss_msfr, pred_pyr, gt_pyr, return_shift=True)
    terms = {"mask": lm, "mae": float(np.mean([v for v, _ in mae])),
             "ssim": float(np.mean([v for v, _ in ss])), "msfr": msfr}
    wd = asdict(w)
    weighted = {k: wd[k] * terms[k] for k in terms}
    shifts = {"mask": [sm], "mae": [s for _, s in mae], "ssim": [s for _, s in ss], "msfr": [sf]}
    return LossBreakdown(terms, wd, weighted, float(sum(weighted.values())), shifts)


# --- gradient checking -----------------------------------------------------

@dataclass
class Objective:
    """Scalar loss of ``S_hat`` with an optional analytic gradient."""

    value: Callable[[np.ndarray], float]
    grad: Callable[[np.ndarray], np.ndarray] | None = None
    kinks: Callable[[np.ndarray], np.ndarray] | None = None  # bool map of non-differentiable points


def objective(name: str, S) -> Objective:
    S = np.asarray(S, dtype=np.float64)
    if name == "mse":
        return Objective(lambda x: loss_mse(x, S), lambda x: grad_mse(x, S))
    if name == "mae":
        return Objective(lambda x: loss_mae(x, S), lambda x: grad_mae(x, S), lambda x: x == S)
    if name == "msfr":
        return Objective(lambda x: loss_msfr(x, S), lambda x: grad_msfr(x, S))
    if name == "ssim":
        return Objective(lambda x: loss_ssim(x, S))
    raise ValueError(f"unknown objective {name!r}")


@dataclass
class GradCheck:
    max_rel_error: float
    checked: int
    skipped: list
    numeric_only: bool = False

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.numeric_only:
            d["max_rel_error"] = None
        return d


def grad_check(obj: Objective, at, eps: float = 1e-6, n: int = 32, seed: int = 0) -> GradCheck:
    """Central differences against the analytic gradient on ``n`` coordinates.

    The difference quotient carries a rounding error of about
    ``4 * machine_eps * |f| / eps``; that amount is discounted before the
    relative error is taken.  Coordinates at a kink are skipped and listed.  Objectives without an
    analytic gradient report ``numeric_only`` and a NaN error.
    """
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    if n < 32:
        raise ValueError("check at least 32 coordinates")
    x = np.array(at, dtype=np.float64)
    rng = np.random.default_rng(seed)
    coords = rng.choice(x.size, size=min(n, x.size), replace=False)
    kink = obj.kinks(x).ravel() if obj.kinks is not None else np.zeros(x.size, dtype=bool)
    g = obj.grad(x).ravel() if obj.grad is not None else None
    flat = x.ravel()
    worst, checked, skipped = 0.0, 0, []
    for c in coords:
        idx = [int(i) for i in np.unravel_index(c, x.shape)]
        if kink[c]:
            skipped.append(idx)
            continue
        old = flat[c]
        flat[c] = old + eps
        fp = obj.value(x)
        flat[c] = old - eps
        fm = obj.value(x)
        flat[c] = old
        num = (fp - fm) / (2 * eps)
        checked += 1
        if g is None:
            continue
        noise = 4 * np.finfo(float).eps * (abs(fp) + abs(fm)) / (2 * eps)
        err = abs(g[c] - num) - noise
        if err > 0:
            worst = max(worst, err / max(abs(g[c]), abs(num)))
    if g is None:
        return GradCheck(float("nan"), checked, skipped, numeric_only=True)
    return GradCheck(worst, checked, skipped)
