import numpy as np
import pytest

from localblur import lbfmg
from localblur.capture_sim import make_scene
from localblur.imgcore import ImageError


def iou(a, b):
    a, b = a > 0.5, b > 0.5
    u = (a | b).sum()
    return 1.0 if u == 0 else (a & b).sum() / u


def test_static_sequence_all_background(textured):
    m = lbfmg.GmmBackgroundModel()
    lbfmg.gmm_init(m, textured)
    for _ in range(5):
        labels = lbfmg.gmm_update(m, textured)
    assert np.all(labels == lbfmg.BACKGROUND)
    assert np.all(m.weight.sum(axis=2) <= 1 + 1e-6)
    assert np.all(m.var >= m.params.var_floor - 1e-15)


def test_single_pixel_jump():
    frame = np.full((6, 6, 3), 0.1)
    m = lbfmg.GmmBackgroundModel()
    m.init(frame)
    for _ in range(20):
        m.update(frame)
    jump = frame.copy()
    jump[2, 3] = 0.9
    labels = m.update(jump)
    assert labels[2, 3] == lbfmg.FOREGROUND
    assert set(np.unique(labels)) <= {0, 127, 255}
    assert (labels != 0).sum() == 1


def test_noisy_static_false_rate():
    rng = np.random.default_rng(0)
    base = rng.random((48, 48, 3)) * 0.8 + 0.1
    m = lbfmg.GmmBackgroundModel()
    m.init(base)
    fg = 0
    for _ in range(100):
        fg += (m.update(base + rng.normal(0, 0.01, base.shape)) > 1).sum()
    assert fg / (100 * 48 * 48) < 0.01


def test_shadow_label():
    frame = np.full((4, 4, 3), 0.6)
    m = lbfmg.GmmBackgroundModel()
    m.init(frame)
    dark = frame.copy()
    dark[1, 1] *= 0.7
    assert m.classify(dark)[1, 1] == lbfmg.SHADOW


def _pairs(scene):
    return scene.static[:2], scene.target[:2], [p[:2] for p in scene.others]


def test_moving_square_iou():
    scene = make_scene(np.random.default_rng(4), 256, 192, n_others=3, frames=12, sprite_size=40, shape="square")
    s, t, o = _pairs(scene)
    res = lbfmg.lbfmg_generate(s, t, o, details=True)
    assert set(np.unique(res.mask)) <= {0.0, 1.0}
    assert iou(res.mask, scene.target[2]) >= 0.8
    # OR is monotone over the opened components
    for part in (res.fg_sharp, res.fg_blur):
        assert np.all(res.mask[lbfmg.open_mask(part > 1)] == 1)
    again = lbfmg.lbfmg_generate(s, t, o)
    assert np.array_equal(again, res.mask)


def test_static_scene_empty(textured):
    pair = (textured, textured)
    assert not lbfmg.lbfmg_generate(pair, pair, [pair, pair]).any()


def test_area_fraction_band():
    for seed in range(3):
        scene = make_scene(np.random.default_rng(100 + seed), 256, 192, n_others=2, frames=10, sprite_size=48)
        frac = lbfmg.lbfmg_generate(*_pairs(scene)).mean()
        assert 0.01 <= frac <= 0.40


def test_missing_static_pair(textured):
    with pytest.raises(ImageError):
        lbfmg.lbfmg_generate(None, (textured, textured))
    m = lbfmg.GmmBackgroundModel()
    m.init(textured)
    with pytest.raises(ImageError):
        m.update(textured[:10])


def test_open_mask_removes_speckle():
    m = np.zeros((20, 20), bool)
    m[3, 3] = True
    m[8:16, 8:16] = True
    out = lbfmg.open_mask(m)
    assert not out[3, 3] and out[8:16, 8:16].all() and out.sum() == 64
