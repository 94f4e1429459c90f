"""Texture descriptors in the spirit of Tamura's six, computed on luminance.

All filtering is circular and undecimated, so whole-image descriptors do not
change when the image is circularly shifted. Raw values live on their own
scales; a :class:`Calibration` measured over a corpus maps each one to [0, 1].
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .image import ColorSpace, ImageBuffer, to_luminance
from .pyramid import PyramidConfig, band_filters

NAMES = ("coarseness", "contrast", "directionality", "line_likeness", "roughness", "regularity")
BASE_NAMES = ("coarseness", "contrast", "directionality", "roughness")
ROUGHNESS_FLOOR = 1e-12
MAX_SCALES = 6


class DescriptorError(ValueError):
    pass


@dataclass(frozen=True)
class DescriptorConfig:
    window_sizes: tuple = (32, 64, 128)
    windows_per_size: int = 100
    variance_floor: float = 1e-5
    contrast_epsilon: float = 1e-4
    orientation_bins: int = 16
    rng_seed: int = 0

    def __post_init__(self):
        if self.windows_per_size < 1:
            raise DescriptorError("windows_per_size must be >= 1")
        if not self.window_sizes or min(self.window_sizes) < 8:
            raise DescriptorError("window sizes must be >= 8 pixels")
        if self.orientation_bins < 2:
            raise DescriptorError("orientation_bins must be >= 2")

    def check(self, shape):
        if max(self.window_sizes) > min(shape):
            raise DescriptorError(
                f"window size {max(self.window_sizes)} exceeds image {shape[1]}x{shape[0]}"
            )


@dataclass(frozen=True)
class Calibration:
    """Per-descriptor min-max constants: ``calibrated = (raw - shift) / scale``."""

    shift: dict
    scale: dict
    corpus: str = ""

    def __post_init__(self):
        for name, s in self.scale.items():
            if not s > 0:
                raise DescriptorError(f"calibration scale for {name} must be > 0")

    def apply(self, name: str, raw: float) -> tuple[float, bool]:
        """Calibrated value clamped to [0, 1], and whether clamping was needed."""
        v = (raw - self.shift[name]) / self.scale[name]
        clamped = min(max(v, 0.0), 1.0)
        # tolerate round-off at the corpus extremes
        return clamped, abs(v - clamped) > 1e-9

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"corpus = {self.corpus}\n")
            for name in NAMES:
                if name in self.shift:
                    fh.write(f"{name}.shift = {float(self.shift[name])!r}\n")
                    fh.write(f"{name}.scale = {float(self.scale[name])!r}\n")

    @classmethod
    def load(cls, path) -> "Calibration":
        shift, scale, corpus = {}, {}, ""
        with open(path) as fh:
            for n, line in enumerate(fh, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                key, sep, value = (p.strip() for p in line.partition("="))
                if not sep:
                    raise DescriptorError(f"{path}:{n}: expected key = value")
                if key == "corpus":
                    corpus = value
                    continue
                name, _, part = key.partition(".")
                if name not in NAMES or part not in ("shift", "scale"):
                    raise DescriptorError(f"{path}:{n}: unknown key {key!r}")
                (shift if part == "shift" else scale)[name] = float(value)
        missing = [n for n in NAMES if n not in shift or n not in scale]
        if missing:
            raise DescriptorError(f"{path}: missing constants for {', '.join(missing)}")
        return cls(shift, scale, corpus)


@dataclass(frozen=True)
class DescriptorVector:
    coarseness: float
    contrast: float
    directionality: float
    line_likeness: float
    roughness: float
    regularity: float
    clamped: tuple = field(default=(), compare=False)

    def values(self) -> tuple:
        return tuple(getattr(self, n) for n in NAMES)


def _plane(L) -> np.ndarray:
    if isinstance(L, ImageBuffer):
        if L.space == ColorSpace.LINEAR_RGB:
            L = to_luminance(L)
        elif L.space != ColorSpace.GRAY:
            raise DescriptorError(f"descriptors need luminance or linearRGB, got {L.space.value}")
        return L.data[0]
    arr = np.asarray(L, dtype=np.float64)
    if arr.ndim != 2:
        raise DescriptorError("expected a 2-D luminance plane")
    return arr


def scales_for(shape) -> int:
    """Pyramid depth for a plane: 6, reduced for small windows to keep >= 4 px at the coarsest scale."""
    return max(1, min(MAX_SCALES, int(math.floor(math.log2(min(shape)))) - 2))


@functools.lru_cache(maxsize=16)
def _small_filters(shape, scales, orientations):
    return tuple(band_filters(shape, PyramidConfig(max(scales, 3), orientations)))[:scales]


def _filters(shape, scales, orientations):
    # caching is only worth it for the many equal-sized windows
    if shape[0] * shape[1] <= 128 * 128:
        return _small_filters(tuple(shape), scales, orientations)
    cfg = PyramidConfig(max(scales, 3), orientations)
    return (f for s, f in enumerate(band_filters(shape, cfg)) if s < scales)


def _bands(L: np.ndarray, scales: int, orientations: int):
    """Complex undecimated band images ``(orientations, H, W)``, finest scale first."""
    spec = fft.fft2(L)
    for filt in _filters(L.shape, scales, orientations):
        yield fft.ifft2(spec * filt, axes=(-2, -1))


# raw descriptor values ---------------------------------------------------------


def _gradient_pairs(L, scales):
    """Horizontal- and vertical-tuned real responses per scale."""
    for band in _bands(L, scales, 2):
        yield band[0].real, band[1].real


def raw_coarseness(L) -> float:
    """Mean over pixels of ``10**s*``, ``s*`` the scale of the strongest response."""
    return _coarseness_and_directionality(_plane(L), 2)[0]


def _laplacian_levels(shape) -> int:
    return max(1, int(math.floor(math.log2(min(shape) / 4))))


def _binomial_response(freqs, dilation):
    """Frequency response of the [1 4 6 4 1]/16 kernel with taps ``dilation`` apart."""
    w = 2 * np.pi * freqs
    return (6 + 8 * np.cos(dilation * w) + 2 * np.cos(2 * dilation * w)) / 16


def raw_contrast(L, epsilon=1e-4) -> float:
    """Mean over levels and pixels of ``|(R_{s-1} - R_s) / (R_s + eps)|``.

    ``R_s`` is the undecimated (a trous) Burt-Adelson lowpass: ``R_{s-1}``
    blurred by the 5-tap binomial kernel dilated by ``2**(s-1)``. The band
    is divided by the coarser image of the pair, its local mean.
    """
    L = _plane(L)
    if np.any(L < 0):
        raise DescriptorError("contrast needs non-negative luminance")
    h, w = L.shape
    prev = L
    total = 0.0
    levels = _laplacian_levels(L.shape)
    for s in range(levels):
        d = 2**s
        hy = _binomial_response(np.fft.fftfreq(h), d)[:, None]
        hx = _binomial_response(np.fft.rfftfreq(w), d)[None, :]
        cur = fft.irfft2(fft.rfft2(prev) * hy * hx, s=L.shape)
        total += float(np.mean(np.abs((prev - cur) / (cur + epsilon))))
        prev = cur
    return total / levels


def orientation_histogram(theta: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Density histogram of orientations (angles mod pi); area is 1 when non-empty.

    Bins are centred on multiples of ``pi / bins`` so that the axis-aligned
    and diagonal orientations of synthetic patterns never sit on an edge.
    The first bin wraps around +-pi/2.
    """
    width = np.pi / bins
    edges = -np.pi / 2 - width / 2 + width * np.arange(bins + 1)
    wrapped = np.mod(np.asarray(theta) - edges[0], np.pi) + edges[0]
    counts, _ = np.histogram(wrapped, bins=edges)
    total = counts.sum()
    if total == 0:
        return np.zeros(bins), edges
    return counts / (total * width), edges


def _entropy(density, edges) -> float:
    p = density * np.diff(edges)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def _noise_floor(L):
    return 1e-9 * float(L.std())


def _orientation_entropy(h, v, bins, floor):
    mag = np.hypot(h, v)
    t = mag.mean() - mag.std()
    # patterns with few distinct magnitudes put many pixels exactly on t;
    # the floor drops round-off left in bands that carry no energy
    keep = (mag >= t - 1e-9 * mag.max()) & (mag > floor)
    if not keep.any():
        return None
    return _entropy(*orientation_histogram(np.arctan2(v[keep], h[keep]), bins))


def _directionality_from(entropies, bins):
    ent = [e for e in entropies if e is not None]
    if not ent:
        return 0.0
    return 1.0 - 10.0 ** (min(ent) / math.log(bins))


def scale_entropies(L, bins=16, scales=None) -> list:
    """Orientation entropy per scale (None where no pixel passes the threshold)."""
    L = _plane(L)
    floor = _noise_floor(L)
    return [_orientation_entropy(h, v, bins, floor) for h, v in _gradient_pairs(L, scales or scales_for(L.shape))]


def raw_directionality(L, bins=16, scales=None) -> float:
    """``1 - 10**(e_min / log(bins))``: 0 for a single orientation, -9 for uniform angles."""
    return _directionality_from(scale_entropies(L, bins, scales), bins)


def _coarseness_and_directionality(L, bins):
    """Both descriptors from one pass over the two-orientation bands."""
    best = np.full(L.shape, -1.0)
    best_scale = np.zeros(L.shape)
    entropies = []
    floor = _noise_floor(L)
    for s, (h, v) in enumerate(_gradient_pairs(L, scales_for(L.shape))):
        r = np.maximum(np.abs(h), np.abs(v))
        better = r > best
        best = np.where(better, r, best)
        best_scale = np.where(better, s, best_scale)
        entropies.append(_orientation_entropy(h, v, bins, floor))
    cor = float(np.mean(10.0**best_scale)) if np.any(best > 0) else 0.0
    return cor, _directionality_from(entropies, bins)


def raw_roughness(L, scales=None) -> float:
    L = _plane(L)
    scales = scales or scales_for(L.shape)
    total, n = 0.0, 0
    for band in _bands(L, scales, 6):
        total += float(np.abs(band).mean(axis=(-2, -1)).sum())
        n += band.shape[0]
    return math.log10(max(total / n, ROUGHNESS_FLOOR))


# windowed descriptors ----------------------------------------------------------

_STREAMS = {"line_likeness": 1, "regularity": 2}


def sample_windows(L: np.ndarray, size: int, cfg: DescriptorConfig, stream: str) -> list:
    """Random ``size`` x ``size`` windows, low-variance ones discarded."""
    rng = np.random.default_rng([cfg.rng_seed, _STREAMS[stream], size])
    h, w = L.shape
    ys = rng.integers(0, h - size + 1, cfg.windows_per_size)
    xs = rng.integers(0, w - size + 1, cfg.windows_per_size)
    out = []
    for y, x in zip(ys, xs):
        win = L[y : y + size, x : x + size]
        if win.var() >= cfg.variance_floor:
            out.append(win)
    return out


def raw_line_likeness(L, cfg: DescriptorConfig = DescriptorConfig()) -> float:
    """``10**max_w(mean directionality over windows of size w)``; 0 if every window is discarded."""
    L = _plane(L)
    cfg.check(L.shape)
    means = []
    for size in cfg.window_sizes:
        wins = sample_windows(L, size, cfg, "line_likeness")
        if wins:
            means.append(np.mean([raw_directionality(w, cfg.orientation_bins) for w in wins]))
    if not means:
        return 0.0
    return 10.0 ** max(means)


def _base_raw(L, cfg: DescriptorConfig) -> dict:
    cor, dir_ = _coarseness_and_directionality(L, cfg.orientation_bins)
    return {
        "coarseness": cor,
        "contrast": raw_contrast(L, cfg.contrast_epsilon),
        "directionality": dir_,
        "roughness": raw_roughness(L),
    }


def _calibrated(name, raw, calib):
    return raw if calib is None else calib.apply(name, raw)[0]


def window_dispersion(L, cfg: DescriptorConfig = DescriptorConfig(), calib: Calibration | None = None) -> dict:
    """Smallest (over window sizes) standard deviation of each base descriptor, or None if no window survives."""
    L = _plane(L)
    cfg.check(L.shape)
    best = {n: None for n in BASE_NAMES}
    for size in cfg.window_sizes:
        wins = sample_windows(L, size, cfg, "regularity")
        if not wins:
            continue
        vals = [_base_raw(w, cfg) for w in wins]
        for n in BASE_NAMES:
            sd = float(np.std([_calibrated(n, v[n], calib) for v in vals]))
            best[n] = sd if best[n] is None else min(best[n], sd)
    return best


def raw_regularity(L, cfg: DescriptorConfig = DescriptorConfig(), calib: Calibration | None = None) -> float:
    """``1 - sum`` of the four minimum window dispersions; 0 if every window is discarded."""
    sd = window_dispersion(L, cfg, calib)
    if any(v is None for v in sd.values()):
        return 0.0
    return 1.0 - sum(sd.values())


# public, optionally calibrated --------------------------------------------------


def coarseness(L, calib=None) -> float:
    return _calibrated("coarseness", raw_coarseness(L), calib)


def contrast(L, calib=None, cfg: DescriptorConfig = DescriptorConfig()) -> float:
    return _calibrated("contrast", raw_contrast(L, cfg.contrast_epsilon), calib)


def directionality(L, calib=None, cfg: DescriptorConfig = DescriptorConfig()) -> float:
    return _calibrated("directionality", raw_directionality(L, cfg.orientation_bins), calib)


def line_likeness(L, cfg: DescriptorConfig = DescriptorConfig(), calib=None) -> float:
    return _calibrated("line_likeness", raw_line_likeness(L, cfg), calib)


def roughness(L, calib=None) -> float:
    return _calibrated("roughness", raw_roughness(L), calib)


def regularity(L, cfg: DescriptorConfig = DescriptorConfig(), calib=None) -> float:
    return _calibrated("regularity", raw_regularity(L, cfg, calib), calib)


def raw_vector(L, cfg: DescriptorConfig = DescriptorConfig(), calib: Calibration | None = None) -> dict:
    """All six raw values; regularity's components use ``calib`` when given."""
    L = _plane(L)
    vals = _base_raw(L, cfg)
    vals["line_likeness"] = raw_line_likeness(L, cfg)
    vals["regularity"] = raw_regularity(L, cfg, calib)
    return vals


def describe(L, cfg: DescriptorConfig = DescriptorConfig(), calib: Calibration | None = None) -> DescriptorVector:
    raw = raw_vector(L, cfg, calib)
    if calib is None:
        return DescriptorVector(**raw)
    out, flagged = {}, []
    for n in NAMES:
        out[n], clamped = calib.apply(n, raw[n])
        if clamped:
            flagged.append(n)
    return DescriptorVector(**out, clamped=tuple(flagged))


def _min_max(name, values):
    lo, hi = float(min(values)), float(max(values))
    if not hi - lo > 0:
        raise DescriptorError(f"cannot calibrate {name}: zero range over the corpus")
    return lo, hi - lo


def calibrate(corpus, cfg: DescriptorConfig = DescriptorConfig(), corpus_id: str = "") -> Calibration:
    """Min-max constants over a corpus of luminance planes or images.

    Regularity is built from calibrated components, so it is calibrated in a
    second pass once the other five constants are known.
    """
    planes = [_plane(c) for c in corpus]
    if not planes:
        raise DescriptorError("calibration corpus is empty")
    raws = [{**_base_raw(p, cfg), "line_likeness": raw_line_likeness(p, cfg)} for p in planes]
    shift, scale = {}, {}
    for n in NAMES[:-1]:
        shift[n], scale[n] = _min_max(n, [r[n] for r in raws])
    stage = Calibration(shift, scale, corpus_id)
    reg = [raw_regularity(p, cfg, stage) for p in planes]
    shift["regularity"], scale["regularity"] = _min_max("regularity", reg)
    return Calibration(shift, scale, corpus_id)


def write_csv(rows, path) -> None:
    """``rows`` is an iterable of ``(image name, DescriptorVector)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("image",) + NAMES)
        for name, vec in rows:
            w.writerow((name,) + tuple(repr(float(v)) for v in vec.values()))
