import warnings

import numpy as np
import pytest
from scipy.ndimage import binary_dilation

from localblur import synthblur as sb
from oracles import box5_nearest, multi_copy_translate


@pytest.fixture
def square_scene(rng):
    img = rng.random((24, 32, 3))
    mask = np.zeros((24, 32))
    mask[8:14, 6:12] = 1
    return img, mask


def _footprint(mask, dxs):
    foot = np.zeros(mask.shape, bool)
    for dx in dxs:
        foot |= np.roll(mask > 0.5, dx, axis=1)
    return foot


def test_translation_matches_multi_copy_oracle(square_scene):
    img, mask = square_scene
    dxs = [0, 1, 2, 3, 4]
    avg = multi_copy_translate(img, mask, dxs)
    plain = sb.synth_local_blur(img, mask, "translation", steps=5, magnitude=4, kernel=False)
    assert np.abs(plain.image - avg).max() < 1e-12
    res = sb.synth_local_blur(img, mask, "translation", steps=5, magnitude=4)
    region = binary_dilation(_footprint(mask, dxs), np.ones((5, 5), bool))
    want = img.copy()
    want[region] = box5_nearest(avg)[region]
    assert np.abs(res.image - want).max() < 1e-12
    assert np.array_equal(res.footprint > 0, _footprint(mask, dxs))


def test_magnitude_zero(square_scene):
    img, mask = square_scene
    res = sb.synth_local_blur(img, mask, steps=1, magnitude=0)
    region = binary_dilation(mask > 0.5, np.ones((5, 5), bool))
    assert np.abs(res.image[region] - box5_nearest(img)[region]).max() < 1e-6
    assert np.array_equal(res.image[~region], img[~region])
    ident = sb.synth_local_blur(img, mask, steps=1, magnitude=0, kernel=False)
    assert np.array_equal(ident.image, img)


def test_background_bit_identical(rng):
    img = rng.random((80, 80, 3))
    mask = np.zeros((80, 80))
    mask[30:45, 25:40] = 1
    for mode, mag in (("translation", 12), ("rotation", 20)):
        res = sb.synth_local_blur(img, mask, mode, steps=7, magnitude=mag, direction=30)
        far = ~binary_dilation(res.footprint > 0, np.ones((21, 21), bool))
        assert np.array_equal(res.image[far], img[far])
        outside = res.mask == 0
        assert np.array_equal(res.image[outside], img[outside])


def test_brightness_conserved(textured):
    mask = np.zeros(textured.shape[:2])
    mask[20:76, 30:100] = 1
    res = sb.synth_local_blur(textured, mask, "translation", steps=5, magnitude=4, direction=45)
    inner = np.zeros_like(mask, dtype=bool)
    inner[26:70, 36:94] = True
    assert res.image[inner].mean() == pytest.approx(textured[inner].mean(), rel=0.01)


def test_kernel_order_flag(square_scene):
    img, mask = square_scene
    a = sb.synth_local_blur(img, mask, steps=5, magnitude=4).image
    b = sb.synth_local_blur(img, mask, steps=5, magnitude=4, kernel_first=True).image
    assert not np.array_equal(a, b)


def test_empty_mask_warns(rng):
    img = rng.random((8, 8, 3))
    with pytest.warns(sb.EmptyMaskWarning):
        res = sb.synth_local_blur(img, np.zeros((8, 8)))
    assert res.empty and np.array_equal(res.image, img)


def test_span_limit(square_scene):
    img, mask = square_scene
    with pytest.raises(ValueError, match="exceeds"):
        sb.synth_local_blur(img, mask, magnitude=80)
    with pytest.raises(ValueError):
        sb.synth_local_blur(img, mask, mode="zoom")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        sb.synth_local_blur(img, mask, mode="rotation", magnitude=45)
