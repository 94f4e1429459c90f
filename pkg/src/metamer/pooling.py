"""Pooling of statistic images over overlapping circular regions.

Uniform pooling blurs each statistic image with a fixed circular kernel and
samples the result on a lattice whose spacing is a fraction of the region
diameter. Gaze-centric pooling resamples the image into log-polar space,
where eccentricity-scaled regions all become the same size, and pools
uniformly there.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import torch

from .resample import bilinear_sample, upsample_matrix


class PoolingError(ValueError):
    pass


UNIFORM, GAZE, GLOBAL = "uniform", "gaze", "global"


def fovea_radius_px(screen_width_px: float = 1920, field_of_view_deg: float = 29.0, fovea_deg: float = 1.7) -> float:
    """Radius in pixels of a fovea spanning ``fovea_deg`` of visual angle."""
    return 0.5 * fovea_deg * screen_width_px / field_of_view_deg


@dataclass(frozen=True)
class PoolingGeometry:
    """Region layout.

    ``diameter`` is in pixels for uniform pooling. For gaze-centric pooling
    the region diameter is ``rate * eccentricity``; ``gaze`` is ``(x, y)``.
    ``mode="global"`` is a single region covering the whole image.
    """

    mode: str = UNIFORM
    diameter: float = 32.0
    rate: float = 0.5
    spacing_fraction: float = 0.25
    gaze: tuple | None = None
    fovea_radius: float = field(default_factory=fovea_radius_px)
    min_warped_diameter: float = 16.0

    def __post_init__(self):
        if self.mode not in (UNIFORM, GAZE, GLOBAL):
            raise PoolingError(f"unknown pooling mode {self.mode!r}")
        if not 0 < self.spacing_fraction <= 1:
            raise PoolingError("spacing_fraction must be in (0, 1]")
        if self.rate <= 0:
            raise PoolingError("rate must be positive")
        if self.fovea_radius < 1:
            raise PoolingError("fovea_radius must be >= 1 pixel")
        if self.mode == UNIFORM and self.diameter < 4:
            raise PoolingError("pooling diameter must be >= 4 pixels")
        if self.mode == GAZE and self.gaze is None:
            raise PoolingError("gaze-centric pooling needs a gaze point")

    @classmethod
    def uniform(cls, diameter: float, spacing_fraction: float = 0.25) -> "PoolingGeometry":
        return cls(UNIFORM, diameter=diameter, spacing_fraction=spacing_fraction)

    @classmethod
    def gaze_centric(cls, gaze, rate: float = 0.5, fovea_radius: float | None = None, **kw) -> "PoolingGeometry":
        if fovea_radius is None:
            fovea_radius = fovea_radius_px()
        return cls(GAZE, gaze=tuple(gaze), rate=rate, fovea_radius=fovea_radius, **kw)

    @classmethod
    def global_region(cls) -> "PoolingGeometry":
        return cls(GLOBAL)

    def step(self) -> float:
        return self.spacing_fraction * self.diameter

    def lattice(self, shape) -> tuple[np.ndarray, np.ndarray]:
        """Row and column positions of the region centres."""
        if self.mode == GLOBAL:
            return np.array([shape[0] // 2]), np.array([shape[1] // 2])
        step = self.step()
        rows = np.floor(np.arange(math.ceil(shape[0] / step)) * step).astype(np.int64)
        cols = np.floor(np.arange(math.ceil(shape[1] / step)) * step).astype(np.int64)
        return rows, cols

    def pooled_shape(self, shape) -> tuple[int, int]:
        rows, cols = self.lattice(shape)
        return len(rows), len(cols)

    def check(self, shape):
        if self.mode == UNIFORM and self.diameter > min(shape):
            raise PoolingError(f"pooling diameter {self.diameter} larger than image {shape[1]}x{shape[0]}")

    def manifest(self) -> dict:
        out = {"mode": self.mode, "spacing_fraction": self.spacing_fraction}
        if self.mode == UNIFORM:
            out["diameter"] = self.diameter
        if self.mode == GAZE:
            out.update(rate=self.rate, gaze=f"{self.gaze[0]},{self.gaze[1]}", fovea_radius=self.fovea_radius)
        return out


def _profile(r, radius):
    inner = radius / 2
    t = np.clip((r - inner) / (radius - inner), 0.0, 1.0)
    return np.where(r < radius, np.cos(0.5 * np.pi * t) ** 2, 0.0)


def pooling_kernel(diameter: float) -> np.ndarray:
    """Unit-sum circular kernel: flat out to half the radius, cos^2 falloff to 0 at the rim."""
    if diameter < 4:
        raise PoolingError("pooling diameter must be >= 4 pixels")
    radius = diameter / 2
    half = math.ceil(radius)
    d = np.arange(-half, half + 1)
    k = _profile(np.hypot(d[:, None], d[None, :]), radius)
    return k / k.sum()


def kernel_grid(shape, diameter: float) -> np.ndarray:
    """The kernel laid out on a full ``shape`` grid with its centre at (0, 0), wrapped."""
    k = pooling_kernel(diameter)
    half = k.shape[0] // 2
    grid = np.zeros(shape)
    d = np.arange(-half, half + 1)
    np.add.at(grid, (d[:, None] % shape[0], d[None, :] % shape[1]), k)
    return grid


@dataclass(frozen=True)
class PooledStatistics:
    kinds: list
    values: np.ndarray  # (K, rows, cols)
    geometry: PoolingGeometry

    def __len__(self):
        return len(self.kinds)


def _pool_planes(images: np.ndarray, geom: PoolingGeometry) -> np.ndarray:
    shape = images.shape[-2:]
    rows, cols = geom.lattice(shape)
    if geom.mode == GLOBAL:
        return images.mean(axis=(-2, -1))[..., None, None]
    kf = np.fft.rfft2(kernel_grid(shape, geom.diameter))
    out = np.empty(images.shape[:-2] + (len(rows), len(cols)))
    for i in range(images.shape[0]):
        blurred = np.fft.irfft2(np.fft.rfft2(images[i]) * kf, s=shape)
        out[i] = blurred[np.ix_(rows, cols)]
    return out


def pool(stats, geom: PoolingGeometry) -> PooledStatistics:
    """Blur every statistic image with the pooling kernel and sample the lattice."""
    if geom.mode == GAZE:
        raise PoolingError("use pool_gaze for gaze-centric geometries")
    geom.check(stats.images.shape[-2:])
    return PooledStatistics(list(stats.kinds), _pool_planes(stats.images, geom), geom)


# --- log-polar resampling -------------------------------------------------


@dataclass(frozen=True)
class LogPolarMap:
    """Rows index ``k * log(e / fovea_radius)``, columns ``k * azimuth`` (centred on +x)."""

    gaze: tuple
    fovea_radius: float
    scale: float
    n_radial: int
    n_azimuth: int
    max_eccentricity: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_radial, self.n_azimuth

    def warped_diameter(self, rate: float) -> float:
        return self.scale * rate

    def to_warped(self, x, y):
        """Warped (row, col) of image points ``(x, y)``; the fovea collapses onto row 0."""
        dx = np.asarray(x, dtype=np.float64) - self.gaze[0]
        dy = np.asarray(y, dtype=np.float64) - self.gaze[1]
        ecc = np.maximum(np.hypot(dx, dy), self.fovea_radius)
        row = self.scale * np.log(ecc / self.fovea_radius)
        col = self.scale * np.arctan2(dy, dx) + self.n_azimuth / 2
        return row, np.mod(col, self.n_azimuth)

    def to_image(self, row, col):
        ecc = self.fovea_radius * np.exp(np.asarray(row, dtype=np.float64) / self.scale)
        phi = (np.asarray(col, dtype=np.float64) - self.n_azimuth / 2) / self.scale
        return self.gaze[0] + ecc * np.cos(phi), self.gaze[1] + ecc * np.sin(phi)


def logpolar_map(shape, geom: PoolingGeometry, min_size: int = 1) -> LogPolarMap:
    """Warp parameters for an image of ``shape`` (rows, cols).

    The scale factor makes a region of diameter ``rate * e`` span
    ``max(min_warped_diameter, ...)`` warped samples on both axes; the azimuth
    axis gets an integer sample count so it wraps exactly.
    """
    if geom.gaze is None:
        raise PoolingError("log-polar warp needs a gaze point")
    gx, gy = geom.gaze
    h, w = shape
    if not (0 <= gx <= w - 1 and 0 <= gy <= h - 1):
        raise PoolingError(f"gaze ({gx}, {gy}) outside image {w}x{h}")
    corners = np.array([[0, 0], [w - 1, 0], [0, h - 1], [w - 1, h - 1]], dtype=np.float64)
    max_ecc = float(np.max(np.hypot(corners[:, 0] - gx, corners[:, 1] - gy)))
    max_ecc = max(max_ecc, geom.fovea_radius * 1.01)
    n_az = max(math.ceil(2 * math.pi * geom.min_warped_diameter / geom.rate), min_size)
    scale = n_az / (2 * math.pi)
    n_r = max(math.ceil(scale * math.log(max_ecc / geom.fovea_radius)) + 1, min_size)
    return LogPolarMap((float(gx), float(gy)), float(geom.fovea_radius), scale, n_r, n_az, max_ecc)


def _as_tensor(img):
    return img if torch.is_tensor(img) else torch.from_numpy(np.array(img, dtype=np.float64))


@functools.lru_cache(maxsize=16)
def _warp_coords(lp: LogPolarMap):
    rows, cols = np.meshgrid(np.arange(lp.n_radial), np.arange(lp.n_azimuth), indexing="ij")
    x, y = lp.to_image(rows, cols)
    return torch.from_numpy(y), torch.from_numpy(x)


@functools.lru_cache(maxsize=16)
def _unwarp_coords(lp: LogPolarMap, shape: tuple):
    y, x = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]), indexing="ij")
    row, col = lp.to_warped(x, y)
    return torch.from_numpy(row), torch.from_numpy(col)


def logpolar_warp(img, lp: LogPolarMap):
    """Resample ``img`` (..., H, W) onto the log-polar grid, bilinear, edge-replicated."""
    t = _as_tensor(img)
    y, x = _warp_coords(lp)
    out = bilinear_sample(t, y.to(t.dtype), x.to(t.dtype))
    return out if torch.is_tensor(img) else out.numpy()


def warp_valid_mask(lp: LogPolarMap, shape) -> np.ndarray:
    """True where a warped sample's source point lies inside an image of ``shape``."""
    y, x = _warp_coords(lp)
    h, w = shape
    return ((y >= 0) & (y <= h - 1) & (x >= 0) & (x <= w - 1)).numpy()


def logpolar_unwarp(warped, lp: LogPolarMap, shape):
    """Inverse resampling back to image space; azimuth wraps, the fovea reads row 0."""
    t = _as_tensor(warped)
    row, col = _unwarp_coords(lp, tuple(shape))
    out = bilinear_sample(t, row.to(t.dtype), col.to(t.dtype), wrap_x=True)
    return out if torch.is_tensor(warped) else out.numpy()


def warped_geometry(geom: PoolingGeometry, lp: LogPolarMap) -> PoolingGeometry:
    """Uniform geometry that pools the warped image."""
    return replace(geom, mode=UNIFORM, diameter=lp.warped_diameter(geom.rate))


def pool_gaze(stats, geom: PoolingGeometry, lp: LogPolarMap) -> PooledStatistics:
    """Pool statistics that were computed on a log-polar warped image."""
    if stats.images.shape[-2:] != lp.shape:
        raise PoolingError("statistics were not computed on the warped grid")
    uni = warped_geometry(geom, lp)
    return PooledStatistics(list(stats.kinds), _pool_planes(stats.images, uni), geom)


# --- sparse operators for the fused path ----------------------------------


def _lattice_matrix(shape, geom: PoolingGeometry) -> sp.csr_matrix:
    n = shape[0] * shape[1]
    if geom.mode == GLOBAL:
        return sp.csr_matrix(np.full((1, n), 1.0 / n))
    rows, cols = geom.lattice(shape)
    k = pooling_kernel(geom.diameter)
    half = k.shape[0] // 2
    d = np.arange(-half, half + 1)
    dy, dx = np.meshgrid(d, d, indexing="ij")
    keep = k > 0
    dy, dx, wk = dy[keep], dx[keep], k[keep]
    py, px = np.meshgrid(rows, cols, indexing="ij")
    py, px = py.ravel(), px.ravel()
    # every region row holds the same kernel taps, so build CSR arrays directly
    pix = ((py[:, None] - dy[None]) % shape[0]).astype(np.int32) * np.int32(shape[1])
    pix += ((px[:, None] - dx[None]) % shape[1]).astype(np.int32)
    indptr = np.arange(len(py) + 1, dtype=np.int64) * len(wk)
    m = sp.csr_matrix((np.tile(wk, len(py)), pix.ravel(), indptr), shape=(len(py), n))
    m.sum_duplicates()
    return m


class PoolingOperator:
    """Pooling of upsampled band planes as one sparse matrix per band grid.

    ``apply(planes)`` with planes ``(K, h, w)`` equals pooling
    ``upsample(planes, shape)``; the bilinear upsample is folded into the
    matrix so full-resolution statistic images are never formed.
    """

    def __init__(self, shape, geom: PoolingGeometry):
        geom.check(shape)
        self.shape = tuple(shape)
        self.geometry = geom
        self.pooled_shape = geom.pooled_shape(shape)
        self._base = _lattice_matrix(self.shape, geom)
        self._cache = {}

    def _scipy_matrix(self, band_shape) -> sp.csr_matrix:
        m = self._base
        if tuple(band_shape) != self.shape:
            uy = sp.csr_matrix(upsample_matrix(self.shape[0], band_shape[0]).numpy())
            ux = sp.csr_matrix(upsample_matrix(self.shape[1], band_shape[1]).numpy())
            m = (m @ sp.kron(uy, ux, format="csr")).tocsr()
        m.sum_duplicates()
        return m

    def matrix(self, band_shape, dtype=torch.float64, transpose: bool = False) -> torch.Tensor:
        key = (tuple(band_shape), dtype, transpose)
        if key not in self._cache:
            m = self._scipy_matrix(band_shape)
            self._cache[key] = _to_torch(m.T.tocsr() if transpose else m, dtype)
        return self._cache[key]

    def apply(self, planes: torch.Tensor) -> torch.Tensor:
        """Pool ``(K, h, w)`` band planes into ``(K, rows, cols)``."""
        k = planes.shape[0]
        flat = planes.reshape(k, -1).T
        return _SparseApply.apply(flat, self, tuple(planes.shape[-2:])).T.reshape((k,) + self.pooled_shape)


def _to_torch(m: sp.csr_matrix, dtype) -> torch.Tensor:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return torch.sparse_csr_tensor(
            torch.from_numpy(m.indptr.astype(np.int32)),
            torch.from_numpy(m.indices.astype(np.int32)),
            torch.from_numpy(m.data).to(dtype),
            size=m.shape,
        )


class _SparseApply(torch.autograd.Function):
    """Sparse pooling matrix times dense columns; the transpose is built on first backward."""

    @staticmethod
    def forward(ctx, x, op, band_shape):
        ctx.op, ctx.band_shape = op, band_shape
        return op.matrix(band_shape, x.dtype) @ x

    @staticmethod
    def backward(ctx, grad):
        mt = ctx.op.matrix(ctx.band_shape, grad.dtype, transpose=True)
        return mt @ grad, None, None
