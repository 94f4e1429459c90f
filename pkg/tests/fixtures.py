"""Seeded synthetic images shared by the tests."""

import numpy as np

from metamer.pyramid import PyramidConfig, build_pyramid
from metamer.statistics import end_stop_image


def texture(size=256, seed=7):
    """Gray texture: oriented band-pass noise plus scattered blobs, in [0, 1]."""
    rng = np.random.default_rng(seed)
    fy = np.fft.fftfreq(size)[:, None]
    fx = np.fft.fftfreq(size)[None, :]
    r = np.hypot(fx, fy)
    theta = np.arctan2(fy, fx)
    envelope = np.exp(-((np.log2(np.maximum(r, 1e-6)) + 3.5) ** 2) / 0.5) * (0.4 + np.cos(theta - 0.6) ** 2)
    noise = np.fft.ifft2(np.fft.fft2(rng.standard_normal((size, size))) * envelope).real
    noise /= noise.std()
    yy, xx = np.mgrid[0:size, 0:size]
    blobs = np.zeros((size, size))
    for _ in range(40):
        cy, cx = rng.uniform(0, size, 2)
        rad = rng.uniform(3, 9)
        d = np.hypot((yy - cy + size / 2) % size - size / 2, (xx - cx + size / 2) % size - size / 2)
        blobs += np.clip(rad - d, 0, 1)
    img = 0.5 + 0.12 * noise + 0.25 * np.clip(blobs, 0, 1)
    return np.clip(img, 0.0, 1.0)


def smooth_image(size=512, seed=3):
    """Smooth natural-looking test image: low-pass noise plus a gentle ramp."""
    rng = np.random.default_rng(seed)
    f = np.hypot(np.fft.fftfreq(size)[:, None], np.fft.fftfreq(size)[None, :])
    spec = np.fft.fft2(rng.standard_normal((size, size))) * np.exp(-((f / 0.02) ** 2))
    low = np.fft.ifft2(spec).real
    low = (low - low.min()) / (low.max() - low.min())
    ramp = np.linspace(0, 1, size)[None, :]
    return 0.2 + 0.5 * low + 0.3 * ramp * np.ones((size, 1))


def grating(size=128, period=8.0, angle=0.0):
    yy, xx = np.mgrid[0:size, 0:size]
    u = xx * np.cos(angle) + yy * np.sin(angle)
    return 0.5 + 0.4 * np.sin(2 * np.pi * u / period)


def checkerboard(size=128, cell=8):
    yy, xx = np.mgrid[0:size, 0:size]
    return np.where((yy // cell + xx // cell) % 2 == 0, 0.8, 0.2)


def noise(size=128, seed=0):
    return np.random.default_rng(seed).uniform(0.1, 0.9, (size, size))


def rings(size=128, period=6.0):
    """Concentric rings: locally oriented, every orientation present globally."""
    yy, xx = np.mgrid[0:size, 0:size]
    r = np.hypot(xx - size / 2 + 0.5, yy - size / 2 + 0.5)
    return 0.5 + 0.4 * np.sin(2 * np.pi * r / period)


def segment_end_stop(cfg=PyramidConfig()):
    """End-stop image of a 16-px horizontal segment at scale 1, horizontally tuned band."""
    img = np.zeros((128, 128))
    img[64, 56:72] = 1.0
    o = cfg.orientations // 2  # frequency angle pi/2: horizontal structure
    mag = build_pyramid(img, cfg).magnitude[1][o].numpy()
    return end_stop_image(mag, 1.0, cfg.orientation_angle(o)), (28, 36), 32
