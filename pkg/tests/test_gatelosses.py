import json

import numpy as np
import pytest

from localblur import gatelosses as gl
from localblur.imgcore import ImageError, pyramid, shift
from oracles import box_mean_down, gate, mae_loop, mse_loop, msfr, overlap


def test_gate_matches_oracle(rng):
    feat = rng.normal(size=(6, 7, 4)) * 3
    blurred = rng.random((6, 7, 3))
    pred, m = gl.gate_forward(feat, blurred)
    want_p, want_m = gate(feat, blurred)
    assert np.abs(pred - want_p).max() < 1e-12 and np.abs(m - want_m).max() < 1e-12
    assert np.all((m > 0) & (m < 1))


def test_gate_saturation(rng):
    feat = rng.normal(size=(5, 5, 4))
    blurred = rng.random((5, 5, 3))
    feat[:, :, 3] = -20
    pred, m = gl.gate_forward(feat, blurred)
    assert m.max() < 1e-8 and np.abs(pred - blurred).max() < 1e-7
    feat[:, :, 3] = 0
    pred, m = gl.gate_forward(feat, blurred)
    assert np.all(m == 0.5) and np.allclose(pred - blurred, 0.5 * feat[:, :, :3])
    feat[:, :, 3] = 1e6
    assert gl.gate_forward(feat, blurred)[1].max() < 1
    with pytest.raises(ImageError):
        gl.gate_forward(feat[:, :4], blurred)


def test_gate_residual_monotone(rng):
    feat = rng.normal(size=(4, 4, 4))
    blurred = rng.random((4, 4, 3))
    prev = np.inf
    for logit in (5, 0, -5, -10, -20):
        feat[:, :, 3] = logit
        r = np.abs(gl.gate_forward(feat, blurred)[0] - blurred).max()
        assert r < prev
        prev = r


def test_mask_loss(rng):
    a, b = rng.random((9, 9)), (rng.random((9, 9)) > 0.5).astype(float)
    assert abs(gl.loss_mask(a, b) - mse_loop(a, b)) < 1e-12
    assert gl.loss_mask(b, b) == 0
    assert gl.loss_mask(np.zeros((3, 3)), np.ones((3, 3))) == 1


def test_identity_values(rng):
    s = rng.random((16, 16, 3))
    assert gl.loss_mae(s, s) == 0 and gl.loss_msfr(s, s) == 0 and gl.loss_ssim(s, s) == -1


def test_msfr_dc_only():
    s = np.random.default_rng(0).random((8, 8, 3))
    # DC bin of 0.1 * HW per channel over t = 2HWC -> 0.05 per level
    assert gl.loss_msfr(s + 0.1, s, levels=1) == pytest.approx(0.05, rel=1e-12)
    assert gl.loss_msfr(s + 0.1, s) == pytest.approx(0.15, rel=1e-12)
    assert gl.loss_mae(s + 0.1, s) == pytest.approx(0.1)


def test_msfr_naive_dft_oracle(rng):
    a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    lv_a = [a, box_mean_down(a, 2), box_mean_down(a, 4)]
    lv_b = [b, box_mean_down(b, 2), box_mean_down(b, 4)]
    want = msfr(lv_a, lv_b)
    assert abs(gl.loss_msfr(a, b) - want) / want < 1e-6
    assert abs(gl.loss_msfr(pyramid(a, 3), pyramid(b, 3)) - want) / want < 1e-6


def test_msfr_common_circular_shift(rng):
    # a common shift multiplies the spectrum by a phase; the real/imag L1 is
    # kept only when that phase lies in {1, -1, i, -i}, i.e. quarter periods
    a, b = rng.random((8, 8, 1)), rng.random((8, 8, 1))
    for off in [(2, 0), (0, 4), (6, 2), (4, 4)]:
        ra, rb = np.roll(a, off, axis=(0, 1)), np.roll(b, off, axis=(0, 1))
        assert msfr([ra], [rb]) == pytest.approx(msfr([a], [b]), rel=1e-9)
        assert gl.loss_msfr(ra, rb, levels=1) == pytest.approx(msfr([a], [b]), rel=1e-9)
    ra, rb = np.roll(a, (3, 5), axis=(0, 1)), np.roll(b, (3, 5), axis=(0, 1))
    assert gl.loss_msfr(ra, rb, levels=1) == pytest.approx(msfr([ra], [rb]), rel=1e-9)
    assert msfr([ra], [rb]) != pytest.approx(msfr([a], [b]), rel=1e-3)


def test_msfr_mismatch():
    with pytest.raises(ImageError):
        gl.loss_msfr([np.zeros((4, 4, 3))], [np.zeros((4, 4, 3)), np.zeros((2, 2, 3))])


def test_shift_invariant_enumeration(rng):
    a, b = rng.random((7, 9, 3)), rng.random((7, 9, 3))
    want = min(mae_loop(*overlap(a, b, k, l)) for k in (-1, 0, 1) for l in (-1, 0, 1))
    got = gl.shift_invariant(gl.loss_mae, a, b)
    assert abs(got - want) < 1e-12
    assert got <= gl.loss_mae(a, b)
    with pytest.raises(ImageError):
        gl.shift_invariant(gl.loss_mae, a[:2], b[:2])


@pytest.mark.parametrize("k,l", [(k, l) for k in (-1, 0, 1) for l in (-1, 0, 1)])
def test_shift_invariant_exact_zero(k, l, textured):
    s = textured[:32, :32]
    s_hat, _ = shift(s, k, l)
    for fn, zero in ((gl.loss_mae, 0.0), (gl.loss_mse, 0.0), (gl.loss_msfr, 0.0), (gl.loss_ssim, -1.0)):
        v, where = gl.shift_invariant(fn, s_hat, s, return_shift=True)
        assert v == zero and where == (-k, -l)


def test_shift_invariant_common_shift_symmetry(rng):
    a, b = rng.random((12, 12, 3)), rng.random((12, 12, 3))
    sa, _ = shift(a, 2, 0)
    sb_, _ = shift(b, 2, 0)
    v1 = gl.shift_invariant(gl.loss_mae, a[:, :-2], b[:, :-2])
    v2 = gl.shift_invariant(gl.loss_mae, sa[:, 2:], sb_[:, 2:])
    assert v1 == pytest.approx(v2, abs=1e-15)


def test_total_loss_identity_and_weights(rng):
    pyr = pyramid(rng.random((16, 16, 3)), 3)
    m = (rng.random((16, 16)) > 0.5).astype(float)
    out = gl.total_loss(pyr, pyr, m, m)
    assert out.total == -1.0
    assert out.weights == {"mask": 0.01, "mae": 1.0, "ssim": 1.0, "msfr": 0.1}
    json.dumps(out.to_dict())


def test_total_loss_hand_combined(rng):
    p = pyramid(rng.random((16, 16, 3)), 3)
    g = pyramid(rng.random((16, 16, 3)), 3)
    mh, m = rng.random((16, 16)), (rng.random((16, 16)) > 0.5).astype(float)
    si = gl.shift_invariant
    want = (0.01 * si(gl.loss_mask, mh, m)
            + np.mean([si(gl.loss_mae, a, b) for a, b in zip(p, g)])
            + np.mean([si(gl.loss_ssim, a, b) for a, b in zip(p, g)])
            + 0.1 * si(gl.loss_msfr, p, g))
    assert gl.total_loss(p, g, mh, m).total == pytest.approx(want, rel=1e-12)
    with pytest.raises(ValueError):
        gl.LossWeights(mask=-1)


def test_nonnegative_losses(rng):
    a, b = rng.random((10, 10, 3)), rng.random((10, 10, 3))
    assert gl.loss_mae(a, b) >= 0 and gl.loss_msfr(a, b) >= 0 and gl.loss_ssim(a, b) >= -1


def test_grad_check_mse(rng):
    s, x = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    assert gl.grad_check(gl.objective("mse", s), x).max_rel_error < 1e-5


def test_grad_check_msfr(rng):
    s, x = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    r = gl.grad_check(gl.objective("msfr", s), x, eps=1e-6, n=64)
    assert r.checked == 64 and r.max_rel_error < 1e-4


def test_grad_check_mae_kink(rng):
    s = rng.random((6, 6, 3))
    x = s.copy()
    x[::2] += 0.3
    r = gl.grad_check(gl.objective("mae", s), x, n=108)
    assert r.skipped and all(x[tuple(i)] == s[tuple(i)] for i in r.skipped)
    assert r.max_rel_error < 1e-4


def test_grad_check_ssim_numeric_only(rng):
    s = rng.random((8, 8, 3))
    r = gl.grad_check(gl.objective("ssim", s), rng.random((8, 8, 3)))
    assert r.numeric_only and r.to_dict()["max_rel_error"] is None
    with pytest.raises(ValueError):
        gl.grad_check(gl.objective("mse", s), s, eps=1e-2)
    with pytest.raises(ValueError):
        gl.grad_check(gl.objective("mse", s), s, n=8)


@pytest.mark.parametrize("name", ["mse", "msfr"])
def test_grad_check_detects_wrong_gradient(name, rng):
    s, x = rng.random((8, 8, 3)), rng.random((8, 8, 3))
    good = gl.objective(name, s)
    bad = gl.Objective(good.value, lambda v: 1.01 * good.grad(v))
    r = gl.grad_check(bad, x, n=64)
    assert r.max_rel_error == pytest.approx(0.01 / 1.01, rel=1e-3)
