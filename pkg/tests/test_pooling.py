import math
from types import SimpleNamespace

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import smooth_image, texture
from oracles import direct_gaze_pool, gaze_pool_error, region_profile, roundtrip_rms
from metamer.pooling import (
    PoolingError,
    PoolingGeometry,
    PoolingOperator,
    fovea_radius_px,
    kernel_grid,
    logpolar_map,
    logpolar_unwarp,
    logpolar_warp,
    pool,
    pool_gaze,
    pooling_kernel,
    warp_valid_mask,
)
from metamer.resample import upsample


def planes(images):
    return SimpleNamespace(kinds=[f"k{i}" for i in range(len(images))], images=np.asarray(images, dtype=float))


# --- kernel ---------------------------------------------------------------


@pytest.mark.parametrize("d", [4, 8, 16, 32, 64, 33.5])
def test_kernel_unit_sum_and_support(d):
    k = pooling_kernel(d)
    assert k.sum() == pytest.approx(1.0, abs=1e-12)
    half = k.shape[0] // 2
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1]
    assert np.all(k[np.hypot(yy, xx) >= d / 2] == 0)
    assert np.all(k >= 0)


def test_kernel_flat_centre_and_monotone_falloff():
    k = pooling_kernel(32)
    row = k[16, 16:]
    assert np.allclose(row[:9], row[0])  # plateau out to radius / 2
    assert np.all(np.diff(row) <= 1e-15)


def test_kernel_matches_profile_written_out():
    d = 24
    k = pooling_kernel(d)
    half = k.shape[0] // 2
    yy, xx = np.mgrid[-half : half + 1, -half : half + 1]
    ref = region_profile(np.hypot(yy, xx), d / 2)
    assert np.allclose(k, ref / ref.sum(), atol=1e-15)


def test_small_diameter_rejected():
    with pytest.raises(PoolingError):
        pooling_kernel(3)
    with pytest.raises(PoolingError):
        PoolingGeometry.uniform(2)


def test_geometry_validation():
    with pytest.raises(PoolingError):
        PoolingGeometry(mode="hex")
    with pytest.raises(PoolingError):
        PoolingGeometry.uniform(16, spacing_fraction=0)
    with pytest.raises(PoolingError):
        PoolingGeometry(mode="gaze")
    with pytest.raises(PoolingError):
        pool(planes(np.zeros((1, 16, 16))), PoolingGeometry.uniform(32))


def test_fovea_radius_default():
    # 1.7 degrees of a 29 degree, 1920 pixel wide field
    assert fovea_radius_px() == pytest.approx(0.5 * 1.7 * 1920 / 29)


# --- uniform pooling --------------------------------------------------------


@pytest.mark.parametrize("d", [8, 16, 32, 64])
def test_constant_preserved(d):
    out = pool(planes(np.full((2, 128, 128), 0.37)), PoolingGeometry.uniform(d)).values
    assert np.max(np.abs(out - 0.37)) < 1e-9


def test_pooled_shape_128_d32():
    out = pool(planes(np.zeros((1, 128, 128))), PoolingGeometry.uniform(32))
    assert out.values.shape == (1, 16, 16)


def test_global_region_is_mean():
    img = texture(64)
    out = pool(planes([img]), PoolingGeometry.global_region()).values
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == pytest.approx(img.mean(), rel=1e-12)


def test_impulse_response_is_kernel():
    img = np.zeros((64, 64))
    img[20, 27] = 1.0
    geom = PoolingGeometry.uniform(16)
    out = pool(planes([img]), geom).values[0]
    rows, cols = geom.lattice(img.shape)
    grid = kernel_grid(img.shape, 16)
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            assert out[i, j] == pytest.approx(grid[(20 - r) % 64, (27 - c) % 64], abs=1e-12)


def test_every_pixel_covered_by_overlapping_regions():
    geom = PoolingGeometry.uniform(32)
    m = PoolingOperator((128, 128), geom).matrix((128, 128)).to_dense().numpy()
    cover = (m > 0).sum(axis=0)
    assert cover.min() >= 4


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_pooling_linear(a, b, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 32, 32))
    geom = PoolingGeometry.uniform(8)
    lhs = pool(planes([a * x + b * y]), geom).values
    rhs = a * pool(planes([x]), geom).values + b * pool(planes([y]), geom).values
    assert np.allclose(lhs, rhs, atol=1e-10)


@pytest.mark.parametrize("band", [(64, 64), (32, 32), (16, 16)])
def test_operator_matches_fft_pooling_of_upsampled_planes(band):
    shape = (64, 64)
    geom = PoolingGeometry.uniform(16)
    x = torch.from_numpy(np.random.default_rng(1).normal(size=(3,) + band))
    fused = PoolingOperator(shape, geom).apply(x).numpy()
    ref = pool(planes(upsample(x, shape).numpy()), geom).values
    assert np.max(np.abs(fused - ref)) < 1e-12


def test_operator_gradient():
    geom = PoolingGeometry.uniform(8)
    op = PoolingOperator((16, 16), geom)
    x = torch.randn(2, 8, 8, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(op.apply, (x,))


# --- log-polar warp ---------------------------------------------------------


def gaze_geom(gaze=(256, 256), **kw):
    return PoolingGeometry.gaze_centric(gaze, **kw)


def test_positive_x_axis_maps_to_centre_column():
    geom = gaze_geom()
    lp = logpolar_map((512, 512), geom)
    e = 150.0
    row, col = lp.to_warped(256 + e, 256)
    assert row == pytest.approx(lp.scale * math.log(e / geom.fovea_radius))
    assert col == pytest.approx(lp.n_azimuth / 2)


def test_doubling_eccentricity_adds_log2_rows():
    lp = logpolar_map((512, 512), gaze_geom())
    r1, c1 = lp.to_warped(256 + 60 * math.cos(1.0), 256 + 60 * math.sin(1.0))
    r2, c2 = lp.to_warped(256 + 120 * math.cos(1.0), 256 + 120 * math.sin(1.0))
    assert r2 - r1 == pytest.approx(lp.scale * math.log(2))
    assert c1 == pytest.approx(c2)


def test_region_spans_min_warped_diameter():
    geom = gaze_geom(min_warped_diameter=16)
    lp = logpolar_map((512, 512), geom)
    assert lp.warped_diameter(geom.rate) >= 16 * 0.99
    assert lp.n_azimuth == math.ceil(2 * math.pi * 16 / geom.rate)


def test_to_image_inverts_to_warped():
    lp = logpolar_map((512, 512), gaze_geom((100, 300)))
    rng = np.random.default_rng(0)
    rows = rng.uniform(0, lp.n_radial - 1, 50)
    cols = rng.uniform(0, lp.n_azimuth - 1, 50)
    r2, c2 = lp.to_warped(*lp.to_image(rows, cols))
    assert np.allclose(r2, rows) and np.allclose(c2, cols)


def test_constant_round_trip():
    lp = logpolar_map((128, 160), gaze_geom((40, 90)))
    back = logpolar_unwarp(logpolar_warp(np.full((128, 160), 0.6), lp), lp, (128, 160))
    assert np.max(np.abs(back - 0.6)) < 1e-12


def test_azimuth_seam_wraps():
    # a warped image that is smooth around the circle unwarps without a seam on the -x axis
    lp = logpolar_map((256, 256), gaze_geom((128, 128)))
    cols = np.arange(lp.n_azimuth)
    warped = np.tile(np.cos(2 * np.pi * cols / lp.n_azimuth), (lp.n_radial, 1))
    back = logpolar_unwarp(warped, lp, (256, 256))
    left = back[127:130, :60]  # straddles the -x axis
    assert np.all(np.abs(np.diff(left, axis=0)) < 0.05)


@pytest.mark.parametrize("gaze", [(256, 256), (100, 300), (0, 0), (511, 511)])
def test_round_trip_smooth_image(gaze):
    err = roundtrip_rms(smooth_image(512), gaze_geom(gaze))
    assert err <= 0.02


def test_gaze_outside_image_rejected():
    with pytest.raises(PoolingError):
        logpolar_map((100, 100), gaze_geom((100, 50)))
    with pytest.raises(PoolingError):
        logpolar_map((100, 100), gaze_geom((-1, 50)))


def test_corner_gaze_accepted():
    lp = logpolar_map((100, 120), gaze_geom((119, 99), fovea_radius=5))
    assert lp.max_eccentricity == pytest.approx(math.hypot(119, 99))


def test_valid_mask_covers_image_side():
    lp = logpolar_map((512, 512), gaze_geom((0, 0)))
    mask = warp_valid_mask(lp, (512, 512))
    # from the top-left corner only azimuths in [0, pi/2] land inside
    frac = mask[5 : lp.n_radial // 2].mean()
    assert frac == pytest.approx(0.25, abs=0.03)


def test_pool_gaze_needs_warped_statistics():
    lp = logpolar_map((256, 256), gaze_geom((128, 128)))
    with pytest.raises(PoolingError):
        pool_gaze(planes(np.zeros((1, 256, 256))), gaze_geom((128, 128)), lp)
    with pytest.raises(PoolingError):
        pool(planes(np.zeros((1, 256, 256))), gaze_geom((128, 128)))


def test_gaze_pool_constant():
    geom = gaze_geom((128, 128))
    lp = logpolar_map((256, 256), geom)
    out = pool_gaze(planes([np.full(lp.shape, 2.5)]), geom, lp).values
    assert np.max(np.abs(out - 2.5)) < 1e-9


@pytest.mark.parametrize("gaze", [(256, 256), (100, 300)])
def test_gaze_pool_matches_direct_space_average(gaze):
    median, n = gaze_pool_error(smooth_image(512), gaze_geom(gaze))
    assert n > 100
    assert median <= 0.05


def test_gaze_regions_grow_with_eccentricity():
    # a small patch far from gaze is diluted by larger regions, yet reaches
    # about as many lattice points, since regions have constant warped size
    geom = gaze_geom((256, 256))
    peaks, counts = [], []
    for e in (60, 200):
        img = np.zeros((512, 512))
        img[254:259, 256 + e - 2 : 256 + e + 3] = 1.0
        _, model, _, _ = direct_gaze_pool(img, geom, logpolar_map(img.shape, geom, min_size=64))
        peaks.append(model.max())
        counts.append(int((model > 1e-6).sum()))
    assert peaks[1] < peaks[0] / 4
    assert 0.5 < counts[1] / counts[0] < 2
