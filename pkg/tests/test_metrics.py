import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from localblur import metrics
from localblur.capture_sim import make_scene
from localblur.imgcore import ImageError, shift
import oracles


@pytest.fixture
def pair(rng):
    a = rng.random((16, 16, 3))
    return a, np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)


def test_psnr_examples():
    z = np.zeros((4, 4, 3))
    assert metrics.psnr(z, z) == 100
    assert metrics.psnr(z, z + 0.1) == pytest.approx(20.0)
    with pytest.raises(ImageError):
        metrics.psnr(z, z[:3])


def test_psnr_oracle(pair):
    assert abs(metrics.psnr(*pair) - oracles.psnr(*pair)) < 1e-9


def test_ssim_oracle(pair):
    want = oracles.ssim_map(*pair)
    assert np.abs(metrics.ssim_map(*pair) - want).max() < 1e-9
    assert abs(metrics.ssim(*pair) - want.mean()) < 1e-9
    a = pair[0]
    assert metrics.ssim(a, a) == 1


def test_weighted_oracles(pair, rng):
    m = (rng.random((16, 16)) > 0.5).astype(float)
    a, b = pair
    assert abs(metrics.weighted_psnr(a, b, m) - oracles.weighted_psnr(a, b, m)) < 1e-9
    smap = oracles.ssim_map(a, b)
    assert abs(metrics.weighted_ssim(a, b, m) - (smap * m).sum() / m.sum()) < 1e-9
    full = np.ones((16, 16))
    assert metrics.weighted_ssim(a, b, full) == pytest.approx(metrics.ssim_map(a, b).mean(), abs=1e-15)
    assert metrics.weighted_psnr(a, a, full) == pytest.approx(80.0)
    with pytest.raises(ImageError, match="empty evaluation region"):
        metrics.weighted_psnr(a, b, np.zeros((16, 16)))


def test_aligned_oracle(pair):
    a, b = pair
    want, where = oracles.aligned_psnr(a, b, 5)
    got, at = metrics.aligned_psnr(a, b, 5)
    assert abs(got - want) < 1e-9 and at == where
    assert got >= metrics.psnr(a, b)


def test_aligned_recovers_shift(textured):
    img = textured[:48, :48]
    for k, l in [(3, 2), (-8, 8), (8, -5), (0, -7)]:
        moved, _ = shift(img, k, l)
        v, at = metrics.aligned_psnr(img, moved, 8)
        assert v == 100 and at == (-k, -l)


def test_aligned_swap_negates(textured):
    img = textured[:40, :40]
    moved, _ = shift(img, 2, -3)
    _, s1 = metrics.aligned_psnr(img, moved, 4)
    _, s2 = metrics.aligned_psnr(moved, img, 4)
    assert s1 == (-s2[0], -s2[1])


def test_aligned_radius_guard():
    with pytest.raises(ImageError):
        metrics.aligned_psnr(np.zeros((10, 10, 3)), np.zeros((10, 10, 3)), 8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 200))
def test_weighted_psnr_monotone(seed, keep):
    rng = np.random.default_rng(seed)
    a, b = rng.random((16, 16, 3)), rng.random((16, 16, 3))
    p = metrics.pixel_psnr(a, b)
    worst = np.argsort(p, axis=None)[:keep]
    small = np.zeros(256)
    small[worst] = 1
    assert metrics.weighted_psnr(a, b, small.reshape(16, 16)) <= metrics.weighted_psnr(a, b, np.ones((16, 16))) + 1e-12


def test_evaluate_identity(pair):
    r = metrics.evaluate_pair(pair[0], pair[0], np.ones((16, 16)), radius=7)
    assert (r.PSNR, r.SSIM, r.SSIM_w, r.PSNR_a) == (100, 1, 1, 100)
    assert r.PSNR_w == pytest.approx(80)
    assert set(metrics.COLUMNS) <= set(r.to_dict())


def test_simulator_pair_weighted_lower():
    scene = make_scene(np.random.default_rng(8), 160, 128, n_others=0, frames=10, sprite_size=32)
    b, s, m = scene.target
    r = metrics.evaluate_pair(s, b, m)
    assert r.PSNR_w < r.PSNR
    agg = metrics.aggregate([r, r])
    assert agg["PSNR"] == pytest.approx(r.PSNR)
    assert metrics.aggregate([])["PSNR"] is None
