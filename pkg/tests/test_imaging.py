import math

import numpy as np
import png
import pytest
from hypothesis import given, settings, strategies as st

from svbrdfgan.imaging import (ImageFormatError, LinearImage, blend, crop, linear_to_srgb, load_image,
                               read_png, sample_training_patch, save_image, srgb_to_linear, write_png)


def _eotf_scalar(v):
    # textbook piecewise sRGB decode, written out independently
    if v <= 0.04045:
        return v / 12.92
    return math.pow((v + 0.055) / 1.055, 2.4)


def _write_raw(path, arr, bitdepth=8, greyscale=False, alpha=False):
    h, w = arr.shape[:2]
    writer = png.Writer(width=w, height=h, greyscale=greyscale, alpha=alpha, bitdepth=bitdepth)
    with open(path, "wb") as fh:
        writer.write(fh, arr.reshape(h, -1))


def test_linear_image_validation():
    with pytest.raises(ValueError):
        LinearImage(np.full((2, 2, 3), -0.1))
    with pytest.raises(ValueError):
        LinearImage(np.full((2, 2, 3), np.nan))
    with pytest.raises(ValueError):
        LinearImage(np.zeros((2, 2, 2)))
    img = LinearImage(np.zeros((4, 5)))
    assert img.shape == (4, 5, 1)
    assert img.data.size == img.width * img.height * img.channels
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0


def test_linear_image_does_not_alias_caller_buffer():
    buf = np.zeros((2, 2, 3), dtype=np.float32)
    img = LinearImage(buf)
    buf[:] = 1
    assert img.data.max() == 0


def test_load_known_bytes(tmp_path):
    arr = np.array([[[0, 0, 0], [255, 255, 255], [128, 128, 128]]], dtype=np.uint8)
    _write_raw(tmp_path / "a.png", arr)
    img = load_image(tmp_path / "a.png")
    assert img.data[0, 0, 0] == 0.0
    assert img.data[0, 1, 0] == 1.0
    assert img.data[0, 2, 0] == pytest.approx(_eotf_scalar(128 / 255), abs=1e-6)
    assert img.data[0, 2, 0] == pytest.approx(0.2158, abs=1e-4)  # value quoted to four places


def test_save_known_values(tmp_path):
    img = LinearImage(np.array([[[0.0] * 3, [1.0] * 3, [0.2158] * 3]]))
    save_image(img, tmp_path / "b.png")
    raw = np.round(read_png(tmp_path / "b.png") * 255).astype(int)
    assert raw[0, 0, 0] == 0
    assert raw[0, 1, 0] == 255
    assert abs(raw[0, 2, 0] - 128) <= 1


def test_save_clamps_out_of_range(tmp_path):
    save_image(LinearImage(np.full((1, 1, 3), 3.0)), tmp_path / "c.png")
    assert np.all(read_png(tmp_path / "c.png") == 1.0)


def test_16bit_and_gray(tmp_path):
    arr = np.array([[0, 65535], [32768, 1000]], dtype=np.uint16)
    _write_raw(tmp_path / "g16.png", arr, bitdepth=16, greyscale=True)
    img = load_image(tmp_path / "g16.png")
    assert img.channels == 1
    assert img.data[0, 1, 0] == 1.0
    assert img.data[1, 0, 0] == pytest.approx(_eotf_scalar(32768 / 65535), abs=1e-6)
    assert img.to_rgb().channels == 3


def test_alpha_and_garbage_rejected(tmp_path):
    _write_raw(tmp_path / "rgba.png", np.zeros((2, 2, 4), dtype=np.uint8), alpha=True)
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "rgba.png")
    (tmp_path / "junk.png").write_bytes(b"not a png at all")
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "junk.png")
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "missing.png")


def test_byte_round_trip_is_exact(tmp_path):
    # every 8-bit code decodes and re-encodes to itself
    codes = np.arange(256, dtype=np.uint8).reshape(16, 16)
    arr = np.stack([codes, codes[::-1], codes.T], axis=2)
    _write_raw(tmp_path / "all.png", arr)
    save_image(load_image(tmp_path / "all.png"), tmp_path / "again.png")
    assert (tmp_path / "all.png").read_bytes() == (tmp_path / "again.png").read_bytes()


@given(st.floats(0.0, 1.0))
def test_srgb_transfer_inverse(v):
    assert float(linear_to_srgb(srgb_to_linear(np.array(v)))) == pytest.approx(v, abs=1e-9)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_srgb_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert srgb_to_linear(np.array(lo)) <= srgb_to_linear(np.array(hi))


def test_crop_examples(rng):
    img = LinearImage(rng.random((8, 8, 3)))
    assert crop(img, 0, 0, 8) == img
    assert np.array_equal(crop(img, 3, 5, 2).data[0, 0], img.data[5, 3])
    const = LinearImage(np.full((6, 6, 3), 0.3))
    assert np.all(crop(const, 1, 2, 3).data == np.float32(0.3))
    with pytest.raises(ValueError):
        crop(img, 7, 0, 2)
    with pytest.raises(ValueError):
        crop(img, -1, 0, 2)


def test_blend_examples(rng):
    a = LinearImage(rng.random((4, 4, 3)))
    b = LinearImage(rng.random((4, 4, 3)))
    assert blend(a, b, 1.0) == a
    assert blend(a, b, 0.0) == b
    assert blend(a, a, 0.37) == a
    c = blend(LinearImage(np.full((2, 2, 3), 0.2)), LinearImage(np.full((2, 2, 3), 0.6)), 0.25)
    assert np.allclose(c.data, 0.5, atol=1e-7)
    with pytest.raises(ValueError):
        blend(a, b, 1.5)
    with pytest.raises(ValueError):
        blend(a, LinearImage(np.zeros((4, 5, 3))), 0.5)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 2**31))
def test_blend_stays_in_convex_hull(w, seed):
    r = np.random.default_rng(seed)
    a = LinearImage(r.random((3, 3, 3)) * 4)
    b = LinearImage(r.random((3, 3, 3)) * 4)
    c = blend(a, b, w).data
    assert np.all(c >= np.minimum(a.data, b.data))
    assert np.all(c <= np.maximum(a.data, b.data))


def _photos(n, size=16, seed=0):
    r = np.random.default_rng(seed)
    return [LinearImage(r.random((size, size, 3))) for _ in range(n)]


def test_patch_sampler_single_photo_is_a_crop():
    photos = _photos(1)
    guess = LinearImage(np.full((16, 16, 3), 0.1))
    r = np.random.default_rng(3)
    for _ in range(50):
        s = sample_training_patch(photos, guess, 8, r)
        x, y = s.origin
        assert not s.blended
        assert s.photo_patch == crop(photos[0], x, y, 8)
        assert s.diffuse_patch == crop(guess, x, y, 8)


def test_patch_sampler_deterministic():
    photos = _photos(3)
    guess = photos[0]
    a = sample_training_patch(photos, guess, 8, np.random.default_rng(11))
    b = sample_training_patch(photos, guess, 8, np.random.default_rng(11))
    assert a == b


def test_patch_sampler_blend_frequency():
    photos = _photos(9, size=8)
    r = np.random.default_rng(2024)
    hits = sum(sample_training_patch(photos, photos[0], 8, r).blended for _ in range(10000))
    assert abs(hits / 10000 - 0.5) <= 0.02


def test_patch_sampler_errors():
    photos = _photos(2)
    with pytest.raises(ValueError):
        sample_training_patch(photos, photos[0], 32, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_training_patch([], photos[0], 8, np.random.default_rng(0))
    with pytest.raises(ValueError):
        sample_training_patch(photos, LinearImage(np.zeros((8, 8, 3))), 4, np.random.default_rng(0))
