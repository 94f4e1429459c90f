"""Complex steerable pyramid built in the Fourier domain.

Filters follow the Portilla-Simoncelli construction: raised-cosine radial
windows one octave wide and ``cos**(orientations - 1)`` angular windows.
The complex (analytic) bands are one-sided in frequency, so their real and
imaginary parts form a Hilbert pair. Each level is computed on a spectrum
cropped to half the previous size; band samples keep the amplitude of the
full-resolution filter output.

Orientation ``o`` has its passband centred on the frequency angle
``o * pi / orientations`` (measured from the +x axis with y pointing down the
rows); the edges it responds to run perpendicular to that.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import torch


class PyramidError(ValueError):
    pass


@dataclass(frozen=True)
class PyramidConfig:
    scales: int = 6
    orientations: int = 6
    end_stop_shift: float = 1.0

    def __post_init__(self):
        if self.scales < 3:
            raise PyramidError("scales must be >= 3")
        if self.orientations < 2:
            raise PyramidError("orientations must be >= 2")
        if self.end_stop_shift < 1:
            raise PyramidError("end_stop_shift must be >= 1 sample")

    def check_shape(self, shape):
        if min(shape) < 2**self.scales:
            raise PyramidError(
                f"image {shape[1]}x{shape[0]} too small for {self.scales} scales "
                f"(min dimension must be >= {2 ** self.scales})"
            )

    def orientation_angle(self, o: int) -> float:
        return math.pi * o / self.orientations

    def level_shapes(self, shape) -> list[tuple[int, int]]:
        """Band shapes per scale, plus the lowpass residual shape last."""
        shapes = [tuple(shape)]
        for _ in range(self.scales):
            h, w = shapes[-1]
            shapes.append((math.ceil(h / 2), math.ceil(w / 2)))
        return shapes


def _freq_index(n: int) -> np.ndarray:
    return np.round(np.fft.fftfreq(n) * n).astype(np.int64)


def _polar(shape, full_shape):
    """log2 radius (Nyquist = 1) and angle for an unshifted spectrum grid."""
    ky = _freq_index(shape[0])[:, None] / full_shape[0]
    kx = _freq_index(shape[1])[None, :] / full_shape[1]
    rad = 2.0 * np.hypot(ky, kx)
    with np.errstate(divide="ignore"):
        log_rad = np.log2(rad)
    angle = np.arctan2(np.broadcast_to(ky, rad.shape), np.broadcast_to(kx, rad.shape))
    return log_rad, angle


def _rise(log_rad, pos):
    """Raised-cosine amplitude: 0 below ``pos - 1`` octave, 1 above ``pos``."""
    t = np.clip(log_rad - (pos - 1.0), 0.0, 1.0)
    return np.sin(0.5 * np.pi * t)


def _fall(log_rad, pos):
    t = np.clip(log_rad - (pos - 1.0), 0.0, 1.0)
    return np.cos(0.5 * np.pi * t)


def _angular(angle, o, n_orient, one_sided):
    order = n_orient - 1
    const = (2.0 ** (2 * order)) * math.factorial(order) ** 2 / (n_orient * math.factorial(2 * order))
    c = np.cos(angle - np.pi * o / n_orient)
    amp = np.full_like(c, math.sqrt(const))
    for _ in range(order):
        amp *= c
    if one_sided:
        # |angle - theta_o| < pi/2 (mod 2 pi) exactly where the cosine is positive
        return 2.0 * amp * (c > 0)
    return amp


def _level_masks(log_rad, angle, s, n_orient):
    """Complex band masks, real band masks, and lowpass mask of level ``s``."""
    pos = -1.5 - s
    hi = _rise(log_rad, pos)
    lo = _fall(log_rad, pos)
    phase = (-1j) ** (n_orient - 1)
    cplx = np.stack([phase * _angular(angle, o, n_orient, True) * hi for o in range(n_orient)])
    real = np.stack([phase * _angular(angle, o, n_orient, False) * hi for o in range(n_orient)])
    return cplx, real, lo


@dataclass(frozen=True)
class _Level:
    shape: tuple
    crop: tuple  # (row index, col index) into the previous level, None at level 0
    ratio: float  # amplitude correction applied after cropping
    band: torch.Tensor
    band_real: torch.Tensor
    low: torch.Tensor


@dataclass(frozen=True)
class _FilterBank:
    hi0: torch.Tensor
    lo0: torch.Tensor
    levels: list
    residual_crop: tuple
    residual_ratio: float


@functools.lru_cache(maxsize=32)
def _filter_bank(shape: tuple, scales: int, n_orient: int, dtype=torch.float64) -> _FilterBank:
    full = tuple(shape)
    log_rad, _ = _polar(full, full)
    cdtype = torch.complex128 if dtype == torch.float64 else torch.complex64
    hi0 = torch.from_numpy(_rise(log_rad, -0.5)).to(dtype)
    lo0 = torch.from_numpy(_fall(log_rad, -0.5)).to(dtype)
    levels = []
    prev = full
    shapes = PyramidConfig(scales, n_orient).level_shapes(full)
    for s in range(scales):
        cur = shapes[s]
        crop = None
        ratio = 1.0
        if s > 0:
            crop = _crop_index(cur, prev)
            ratio = (cur[0] * cur[1]) / (prev[0] * prev[1])
        lr, ang = _polar(cur, full)
        cplx, real, low = _level_masks(lr, ang, s, n_orient)
        levels.append(
            _Level(
                cur,
                crop,
                ratio,
                torch.from_numpy(cplx).to(cdtype),
                torch.from_numpy(real).to(cdtype),
                torch.from_numpy(low).to(dtype),
            )
        )
        prev = cur
    last = shapes[scales]
    residual_crop = _crop_index(last, prev)
    residual_ratio = (last[0] * last[1]) / (prev[0] * prev[1])
    return _FilterBank(hi0, lo0, levels, residual_crop, residual_ratio)


def _crop_index(small, big):
    return (
        torch.from_numpy(_freq_index(small[0]) % big[0]),
        torch.from_numpy(_freq_index(small[1]) % big[1]),
    )


def _crop(spec, idx):
    rows, cols = idx
    return spec[..., rows, :][..., cols]


def _pad(spec, idx, shape):
    rows, cols = idx
    out = spec.new_zeros(spec.shape[:-2] + tuple(shape))
    out[..., rows[:, None], cols[None, :]] = spec
    return out


def phase_double(band):
    """``band**2 / |band|``, zero where the band is zero."""
    if not torch.is_tensor(band):
        b = np.asarray(band, dtype=np.complex128)
        mag = np.abs(b)
        safe = np.where(mag > 0, mag, 1.0)
        return np.where(mag > 0, b * b / safe, 0)
    mag = band.abs()
    nonzero = mag > 0
    safe = torch.where(nonzero, mag, torch.ones_like(mag))
    return torch.where(nonzero, band * band / safe, torch.zeros_like(band))


@dataclass
class SteerablePyramid:
    """Bands of one plane.

    ``bands[s]`` is a complex tensor ``(orientations, h_s, w_s)``; index it as
    ``bands[s][o]``. Derived images are computed on first access.
    """

    bands: list
    highpass: torch.Tensor
    lowpass: torch.Tensor
    config: PyramidConfig
    shape: tuple
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def magnitude(self) -> list:
        if "mag" not in self._cache:
            self._cache["mag"] = [b.abs() for b in self.bands]
        return self._cache["mag"]

    @property
    def phase_doubled(self) -> list:
        if "pd" not in self._cache:
            self._cache["pd"] = [phase_double(b) for b in self.bands]
        return self._cache["pd"]


def _as_tensor(plane):
    if torch.is_tensor(plane):
        return plane if plane.is_floating_point() else plane.double()
    return torch.from_numpy(np.array(plane, dtype=np.float64))


def build_pyramid(plane, cfg: PyramidConfig = PyramidConfig()) -> SteerablePyramid:
    """Decompose a real plane (or a batch ``(..., H, W)``) into oriented bands."""
    x = _as_tensor(plane)
    shape = tuple(x.shape[-2:])
    cfg.check_shape(shape)
    bank = _filter_bank(shape, cfg.scales, cfg.orientations, x.dtype)

    spec = torch.fft.fft2(x)
    highpass = torch.fft.ifft2(spec * bank.hi0).real
    lo = spec * bank.lo0
    bands = []
    for lev in bank.levels:
        if lev.crop is not None:
            lo = _crop(lo, lev.crop) * lev.ratio
        bands.append(torch.fft.ifft2(lo.unsqueeze(-3) * lev.band))
        lo = lo * lev.low
    lo = _crop(lo, bank.residual_crop) * bank.residual_ratio
    lowpass = torch.fft.ifft2(lo).real
    return SteerablePyramid(bands, highpass, lowpass, cfg, shape)


def reconstruct(pyr: SteerablePyramid) -> torch.Tensor:
    """Invert the pyramid from the real parts of the bands and both residuals."""
    cfg = pyr.config
    bank = _filter_bank(tuple(pyr.shape), cfg.scales, cfg.orientations, pyr.lowpass.dtype)

    prev_shape = bank.levels[-1].shape
    spec = _pad(torch.fft.fft2(pyr.lowpass), bank.residual_crop, prev_shape) / bank.residual_ratio
    for s in range(cfg.scales - 1, -1, -1):
        lev = bank.levels[s]
        band_spec = torch.fft.fft2(pyr.bands[s].real)
        spec = spec * lev.low + (band_spec * lev.band_real.conj()).sum(-3)
        if lev.crop is not None:
            spec = _pad(spec, lev.crop, bank.levels[s - 1].shape) / lev.ratio
    spec = spec * bank.lo0 + torch.fft.fft2(pyr.highpass) * bank.hi0
    return torch.fft.ifft2(spec).real


def band_filters(shape, cfg: PyramidConfig = PyramidConfig()):
    """Yield the full-resolution analytic filters ``(orientations, H, W)`` one scale at a time.

    Filtering an image with these (no decimation) gives band images that are
    exactly equivariant under circular shifts.
    """
    shape = tuple(shape)
    log_rad, angle = _polar(shape, shape)
    phase = (-1j) ** (cfg.orientations - 1)
    # the angular masks do not depend on scale
    angular = np.stack([phase * _angular(angle, o, cfg.orientations, True) for o in range(cfg.orientations)])
    chain = _fall(log_rad, -0.5)
    for s in range(cfg.scales):
        pos = -1.5 - s
        yield angular * (_rise(log_rad, pos) * chain)
        chain = chain * _fall(log_rad, pos)


def filter_responses(shape, cfg: PyramidConfig = PyramidConfig()) -> dict:
    """Full-resolution frequency responses of every filter in the bank.

    Returns numpy arrays on the unshifted FFT grid: ``highpass``, ``lowpass``,
    and per-scale stacks ``complex[s]`` (analytic filters) and ``real[s]``,
    ``imag[s]`` (filters that produce the real and imaginary parts of the
    complex bands).
    """
    shape = tuple(shape)
    log_rad, _ = _polar(shape, shape)
    out = {"highpass": _rise(log_rad, -0.5), "complex": [], "real": [], "imag": []}
    flip = (-_freq_index(shape[0]) % shape[0], -_freq_index(shape[1]) % shape[1])
    for c in band_filters(shape, cfg):
        c_neg = np.conj(c[:, flip[0][:, None], flip[1][None, :]])
        out["complex"].append(c)
        out["real"].append((c + c_neg) / 2)
        out["imag"].append((c - c_neg) / 2j)
    chain = _fall(log_rad, -0.5)
    for s in range(cfg.scales):
        chain = chain * _fall(log_rad, -1.5 - s)
    out["lowpass"] = chain
    return out
