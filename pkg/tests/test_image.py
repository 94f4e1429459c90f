import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from metamer.image import (
    ColorSpace,
    ImageBuffer,
    ImageError,
    load_image,
    opponent_planes,
    save_image,
    srgb_decode,
    srgb_encode,
    to_luminance,
    to_opponent,
)

import cv2


def _srgb_reference(v):
    # IEC 61966-2-1 decode written out independently
    v = np.asarray(v, dtype=float)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def _write_png(path, arr):
    assert cv2.imwrite(str(path), arr)
    return path


def test_decode_black_white_and_mid(tmp_path):
    arr = np.array([[0, 128, 255]], dtype=np.uint8)
    img = load_image(_write_png(tmp_path / "g.png", arr))
    assert img.space == ColorSpace.GRAY
    np.testing.assert_allclose(img.data[0, 0], [0.0, _srgb_reference(128 / 255), 1.0], atol=1e-12)
    assert img.data[0, 0, 1] == pytest.approx(0.2158, abs=1e-4)


def test_load_rgb_channel_order(tmp_path):
    bgr = np.zeros((2, 2, 3), dtype=np.uint8)
    bgr[..., 2] = 255  # red in OpenCV's BGR layout
    img = load_image(_write_png(tmp_path / "r.png", bgr))
    assert img.space == ColorSpace.LINEAR_RGB
    np.testing.assert_allclose(img.data[:, 0, 0], [1.0, 0.0, 0.0])


def test_load_16bit_and_alpha_dropped(tmp_path):
    bgra = np.full((3, 4, 4), 65535, dtype=np.uint16)
    bgra[..., 3] = 0
    img = load_image(_write_png(tmp_path / "a.png", bgra))
    assert img.channels == 3
    assert img.shape == (3, 4)
    np.testing.assert_allclose(img.data, 1.0)


def test_load_missing_names_path(tmp_path):
    missing = tmp_path / "nope.png"
    with pytest.raises(ImageError, match="nope.png"):
        load_image(missing)


def test_load_garbage_file(tmp_path):
    p = tmp_path / "bad.png"
    p.write_bytes(b"not a png")
    with pytest.raises(ImageError):
        load_image(p)


def test_save_roundtrip_within_quantization(tmp_path):
    rng = np.random.default_rng(1)
    img = ImageBuffer.rgb(rng.uniform(0, 1, (3, 16, 16)))
    save_image(img, tmp_path / "x.png")
    back = load_image(tmp_path / "x.png")
    # half a 16-bit code in the encoded domain, mapped through the steepest part of the decode
    step = 0.5 / 65535
    slope = 1 / 12.92
    assert np.max(np.abs(back.data - img.data)) <= step * max(slope, 2.4 / 1.055) + 1e-12


def test_save_clamps(tmp_path):
    img = ImageBuffer.gray(np.array([[1.2, -0.1]]))
    save_image(img, tmp_path / "c.png")
    np.testing.assert_array_equal(load_image(tmp_path / "c.png").data[0, 0], [1.0, 0.0])


def test_save_rejects_nonfinite(tmp_path):
    with pytest.raises(ImageError):
        save_image(ImageBuffer.gray(np.array([[np.nan]])), tmp_path / "n.png")


def test_buffer_is_read_only_and_validated():
    img = ImageBuffer.gray(np.zeros((2, 3)))
    assert (img.width, img.height, img.channels) == (3, 2, 1)
    assert img.data.size == img.width * img.height * img.channels
    with pytest.raises(ValueError):
        img.data[0, 0, 0] = 1.0
    with pytest.raises(ImageError):
        ImageBuffer(np.zeros((4, 2, 2)), ColorSpace.LINEAR_RGB)


@pytest.mark.parametrize(
    "rgb, expected",
    [((1, 1, 1), 1.0), ((1, 0, 0), 0.2126), ((0, 1, 0), 0.7152), ((0, 0, 1), 0.0722)],
)
def test_luminance_weights(rgb, expected):
    img = ImageBuffer.rgb(np.array(rgb, dtype=float)[:, None, None])
    assert to_luminance(img).data[0, 0, 0] == pytest.approx(expected, abs=1e-15)


def test_luminance_needs_rgb():
    with pytest.raises(ImageError):
        to_luminance(ImageBuffer.gray(np.zeros((2, 2))))


@given(st.floats(0, 1))
def test_gray_has_no_opponent_signal(v):
    opp = to_opponent(ImageBuffer.rgb(np.full((3, 1, 1), v)))
    assert abs(opp.red_green[0, 0]) <= 1e-6
    assert abs(opp.blue_yellow[0, 0]) <= 1e-6


def test_white_is_achromatic_maximum():
    rng = np.random.default_rng(0)
    opp = to_opponent(ImageBuffer.rgb(np.concatenate([np.ones((3, 1, 1)), rng.uniform(0, 1, (3, 1, 50))], axis=2)))
    assert opp.achromatic[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert opp.achromatic.max() == pytest.approx(opp.achromatic[0, 0])
    assert abs(opp.red_green[0, 0]) < 1e-12 and abs(opp.blue_yellow[0, 0]) < 1e-12


def test_red_is_positive_red_green():
    opp = to_opponent(ImageBuffer.rgb(np.array([1.0, 0, 0])[:, None, None]))
    assert opp.red_green[0, 0] > 0


@settings(max_examples=30)
@given(st.floats(0, 1), st.floats(0, 1))
def test_achromatic_monotone_in_luminance(a, b):
    lo, hi = sorted((a, b))
    opp = to_opponent(ImageBuffer.rgb(np.array([lo, hi])[None, None, :].repeat(3, 0)))
    assert opp.achromatic[0, 0] <= opp.achromatic[0, 1] + 1e-15


@settings(max_examples=30)
@given(st.floats(0, 1))
def test_linear_mode_is_affine(alpha):
    rng = np.random.default_rng(3)
    i1, i2 = rng.uniform(0, 1, (2, 3, 4, 4))
    mix = to_opponent(ImageBuffer.rgb(alpha * i1 + (1 - alpha) * i2), linear=True).stack()
    parts = alpha * to_opponent(ImageBuffer.rgb(i1), linear=True).stack() + (1 - alpha) * to_opponent(
        ImageBuffer.rgb(i2), linear=True
    ).stack()
    np.testing.assert_allclose(mix, parts, atol=1e-12)


def test_opponent_is_differentiable_at_black():
    x = torch.zeros(3, 2, 2, dtype=torch.float64, requires_grad=True)
    opponent_planes(x).sum().backward()
    assert torch.isfinite(x.grad).all()


def test_srgb_encode_inverts_decode():
    v = np.linspace(0, 1, 101)
    np.testing.assert_allclose(srgb_encode(srgb_decode(v)), v, atol=1e-12)
