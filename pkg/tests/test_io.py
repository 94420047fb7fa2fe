import numpy as np
import pytest

from localblur import io
from localblur.imgcore import BayerImage, FlowField, mosaic


def test_pfm_round_trip_bit_identical(tmp_path, rng):
    img = rng.random((7, 5, 3)).astype(np.float32).astype(np.float64)
    p = tmp_path / "a.pfm"
    io.save_image(img, p)
    assert np.array_equal(io.load_image(p), img)


def test_pfm_single_plane(tmp_path, rng):
    img = rng.random((4, 6, 1)).astype(np.float32).astype(np.float64)
    io.save_image(img, tmp_path / "g.pfm")
    assert np.array_equal(io.load_image(tmp_path / "g.pfm"), img)


def test_png16_quantisation(tmp_path):
    img = np.full((3, 4, 3), 0.5)
    io.save_image(img, tmp_path / "h.png")
    back = io.load_image(tmp_path / "h.png")
    assert np.abs(back - img).max() <= 1 / 65535


def test_png16_rgb_order(tmp_path):
    img = np.zeros((2, 2, 3))
    img[:, :, 0] = 1.0
    io.save_image(img, tmp_path / "r.png")
    assert np.array_equal(io.load_image(tmp_path / "r.png"), img)


def test_bayer_sidecar_round_trip(tmp_path, rng):
    raw = mosaic(rng.random((4, 6, 3)), "GBRG")
    for name in ("b.pfm", "b.png"):
        io.save_image(raw, tmp_path / name)
        back = io.load_image(tmp_path / name)
        assert isinstance(back, BayerImage)
        assert back.pattern == "GBRG"
        assert np.abs(back.data - raw.data).max() <= 1 / 65535
    assert (tmp_path / "b.pfm.meta").read_text().startswith("pattern=GBRG")


def test_truncated_pfm(tmp_path, rng):
    p = tmp_path / "t.pfm"
    io.save_image(rng.random((8, 8, 3)), p)
    data = p.read_bytes()
    p.write_bytes(data[:-10])
    with pytest.raises(io.ImageFormatError, match="truncated"):
        io.load_image(p)


def test_truncated_png(tmp_path, rng):
    p = tmp_path / "t.png"
    io.save_image(rng.random((8, 8, 3)), p)
    p.write_bytes(p.read_bytes()[:40])
    with pytest.raises(io.ImageFormatError):
        io.load_image(p)


def test_garbage_and_bad_format(tmp_path):
    p = tmp_path / "x.pfm"
    p.write_bytes(b"hello")
    with pytest.raises(io.ImageFormatError):
        io.load_image(p)
    with pytest.raises(io.ImageFormatError):
        io.save_image(np.zeros((2, 2, 3)), tmp_path / "x.jpg")
    with pytest.raises(FileNotFoundError):
        io.load_image(tmp_path / "missing.pfm")


def test_bayer_channel_mismatch(tmp_path, rng):
    p = tmp_path / "c.pfm"
    io.save_image(rng.random((4, 4, 3)), p)
    (tmp_path / "c.pfm.meta").write_text("pattern=RGGB\n")
    with pytest.raises(io.ImageFormatError, match="one channel"):
        io.load_image(p)


def test_flow_round_trip(tmp_path, rng):
    f = FlowField(rng.normal(size=(5, 4)).astype(np.float32), rng.normal(size=(5, 4)).astype(np.float32))
    io.save_flow(f, tmp_path / "f.pfm")
    g = io.load_flow(tmp_path / "f.pfm")
    assert np.array_equal(g.u, f.u) and np.array_equal(g.v, f.v)


def test_mask_png(tmp_path):
    m = np.zeros((4, 5))
    m[1:3, 2:4] = 1
    io.write_mask_png(tmp_path / "m.png", m)
    assert np.array_equal(io.load_mask(tmp_path / "m.png"), m)
