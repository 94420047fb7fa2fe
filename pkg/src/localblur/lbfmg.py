"""Ground-truth blur masks from per-pixel Gaussian-mixture background models.

Two models are kept per scene, one fed with sharp frames and one with
blurred frames.  Both start from the static background pair, absorb every
other pair of the scene, and then classify the target pair.  A pixel is in
the mask when either model calls it shadow or foreground; a 5x5 opening
removes speckle.

Labels follow the usual background-subtractor convention: 0 background,
127 shadow, 255 foreground.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .imgcore import ImageError, as_image

BACKGROUND, SHADOW, FOREGROUND = 0, 127, 255


@dataclass(frozen=True)
class GmmParams:
    k_max: int = 5
    rho: float = 0.05
    t_bg: float = 0.9
    match_sigma: float = 2.5
    var_floor: float = (4.0 / 255.0) ** 2
    var_init: float = 3 * (4.0 / 255.0) ** 2
    var_max: float = 0.25
    detect_shadows: bool = True
    shadow_tau: float = 0.5


class GmmBackgroundModel:
    """Per-pixel mixture of isotropic Gaussians over colour.

    Components are kept sorted by ``w / sigma`` (most reliable first).  The
    variance is that of the summed squared colour distance, so the match test
    is ``|x - mu|^2 <= match_sigma^2 * var``.
    """

    def __init__(self, params: GmmParams | None = None):
        self.params = params or GmmParams()
        self.weight = None
        self.mean = None
        self.var = None

    @property
    def initialized(self) -> bool:
        return self.weight is not None

    def init(self, static_image) -> None:
        x = as_image(static_image)
        h, w, c = x.shape
        k = self.params.k_max
        self.weight = np.zeros((h, w, k))
        self.mean = np.zeros((h, w, k, c))
        self.var = np.full((h, w, k), self.params.var_init)
        self.weight[:, :, 0] = 1.0
        self.mean[:, :, 0] = x

    def _sort(self) -> None:
        key = np.where(self.weight > 0, self.weight / np.sqrt(self.var), -1.0)
        order = np.argsort(-key, axis=2, kind="stable")
        self.weight = np.take_along_axis(self.weight, order, axis=2)
        self.var = np.take_along_axis(self.var, order, axis=2)
        self.mean = np.take_along_axis(self.mean, order[..., None], axis=2)

    def classify(self, frame) -> np.ndarray:
        """Label a frame without changing the model."""
        return self._step(frame, update=False)

    def update(self, frame) -> np.ndarray:
        """Label a frame with the current model, then learn from it."""
        return self._step(frame, update=True)

    def _step(self, frame, update: bool) -> np.ndarray:
        if not self.initialized:
            raise ImageError("model not initialised")
        p = self.params
        x = as_image(frame)
        if x.shape != self.mean.shape[:2] + self.mean.shape[3:]:
            raise ImageError(f"frame {x.shape} does not match model {self.mean.shape[:2]}")
        self._sort()
        w, mu, var = self.weight, self.mean, self.var
        active = w > 0
        diff = x[:, :, None, :] - mu
        d2 = np.einsum("ijkc,ijkc->ijk", diff, diff)
        fits = active & (d2 <= p.match_sigma ** 2 * var)
        matched = fits.any(axis=2)
        idx = np.argmax(fits, axis=2)

        # components before the cumulative weight reaches t_bg form the background
        cum_before = np.cumsum(w, axis=2) - w
        in_bg = active & (cum_before < p.t_bg)
        hit_bg = matched & np.take_along_axis(in_bg, idx[..., None], axis=2)[..., 0]

        labels = np.full(x.shape[:2], FOREGROUND, dtype=np.uint8)
        labels[hit_bg] = BACKGROUND
        if p.detect_shadows:
            shadow = self._shadow(x, in_bg) & ~hit_bg
            labels[shadow] = SHADOW

        if update:
            self._learn(x, d2, diff, matched, idx)
        return labels

    def _shadow(self, x, in_bg) -> np.ndarray:
        p = self.params
        mu = self.mean
        num = np.einsum("ijc,ijkc->ijk", x, mu)
        den = np.einsum("ijkc,ijkc->ijk", mu, mu)
        a = num / np.maximum(den, 1e-12)
        # |x - a mu|^2 expanded
        dist = np.einsum("ijc,ijc->ij", x, x)[..., None] - 2 * a * num + a * a * den
        ok = in_bg & (a >= p.shadow_tau) & (a <= 1.0) & (dist < p.match_sigma ** 2 * self.var * a * a)
        return ok.any(axis=2)

    def _learn(self, x, d2, diff, matched, idx) -> None:
        p = self.params
        w, mu, var = self.weight, self.mean, self.var
        w *= 1.0 - p.rho
        rows, cols = np.nonzero(matched)
        k = idx[rows, cols]
        w[rows, cols, k] += p.rho
        lr = np.minimum(p.rho / w[rows, cols, k], 1.0)
        mu[rows, cols, k] += lr[:, None] * diff[rows, cols, k]
        var[rows, cols, k] += lr * (d2[rows, cols, k] - var[rows, cols, k])

        # unmatched pixels: take a free slot or replace the least reliable one
        rows, cols = np.nonzero(~matched)
        if rows.size:
            key = np.where(w > 0, w / np.sqrt(var), -1.0)
            k = np.argmin(key[rows, cols], axis=1)
            w[rows, cols, k] = p.rho
            mu[rows, cols, k] = x[rows, cols]
            var[rows, cols, k] = p.var_init
        np.clip(var, p.var_floor, p.var_max, out=var)
        total = w.sum(axis=2, keepdims=True)
        w /= np.maximum(total, 1e-12)


def gmm_init(model: GmmBackgroundModel, static_image) -> GmmBackgroundModel:
    model.init(static_image)
    return model


def gmm_update(model: GmmBackgroundModel, frame) -> np.ndarray:
    return model.update(frame)


@dataclass(frozen=True)
class MorphParams:
    size: int = 5
    iterations: int = 1


def open_mask(mask: np.ndarray, morph: MorphParams | None = None) -> np.ndarray:
    """Erosion then dilation with a square structuring element."""
    morph = morph or MorphParams()
    m = np.asarray(mask, dtype=bool)
    if morph.size <= 1 or morph.iterations <= 0:
        return m
    se = np.ones((morph.size, morph.size), dtype=bool)
    m = binary_erosion(m, se, iterations=morph.iterations, border_value=1)
    return binary_dilation(m, se, iterations=morph.iterations)


@dataclass
class MaskResult:
    mask: np.ndarray
    fg_sharp: np.ndarray
    fg_blur: np.ndarray


def lbfmg_generate(static_pair, target_pair, other_pairs=(), params: GmmParams | None = None,
                   morph: MorphParams | None = None, details: bool = False):
    """Binary blur mask for the target pair.

    ``static_pair`` and ``target_pair`` are ``(sharp, blurred)``;
    ``other_pairs`` is a sequence of ``(sharp, blurred)`` from the same scene.
    """
    if static_pair is None or len(static_pair) != 2 or any(v is None for v in static_pair):
        raise ImageError("LBFMG needs the static (background-only) pair")
    s0, b0 = static_pair
    s1, b1 = target_pair
    g1 = GmmBackgroundModel(params)
    g2 = GmmBackgroundModel(params)
    g1.init(s0)
    g2.init(b0)
    for sk, bk in other_pairs:
        g1.update(sk)
        g2.update(bk)
    fg_s = g1.update(s1)
    fg_b = g2.update(b1)
    raw = (fg_s > 1) | (fg_b > 1)
    mask = open_mask(raw, morph).astype(np.float64)
    if details:
        return MaskResult(mask, fg_s, fg_b)
    return mask
