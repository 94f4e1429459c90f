"""Statistic images computed from per-channel steerable pyramids.

Every statistic is a raw (non mean-subtracted) product of pyramid images.
Products are formed at band resolution; :func:`compute_statistics` then
upsamples each one bilinearly to the input resolution. The band-resolution
pieces are also consumed directly by the fused pooling path in
:mod:`metamer.pipeline`.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass

import numpy as np
import torch

from .image import ColorSpace, ImageBuffer, OpponentImage
from .pyramid import PyramidConfig, build_pyramid, phase_double
from .resample import circular_shift, upsample

CHANNELS = ("A", "RG", "BY")
COLOR_PAIRS = (("A", "RG"), ("A", "BY"), ("RG", "BY"))

# catalog order of the per-channel tags, then the cross-color ones
CHANNEL_TAGS = (
    "PixelMean",
    "MagMean",
    "MagSecondMoment",
    "XOrientCorr",
    "XScaleMagCorr",
    "XScalePhaseCorr",
    "EndStop",
)
COLOR_TAGS = ("XColorMagCorr", "XColorPhaseCorr")
NONNEGATIVE_TAGS = frozenset({"MagMean", "MagSecondMoment", "XOrientCorr", "XScaleMagCorr", "EndStop", "XColorMagCorr"})


@dataclass(frozen=True)
class StatisticKind:
    tag: str
    channel: str | None = None
    scale: int | None = None
    orientation: int | None = None
    orientation2: int | None = None
    pair: tuple[str, str] | None = None

    @property
    def label(self) -> str:
        args = []
        if self.scale is not None:
            args.append(f"s={self.scale}")
        if self.orientation is not None:
            args.append(f"o={self.orientation}")
        if self.orientation2 is not None:
            args.append(f"o2={self.orientation2}")
        if self.pair is not None:
            args.append("pair=" + "-".join(self.pair))
        return f"{self.tag}({','.join(args)})"

    @property
    def channel_label(self) -> str:
        return self.channel if self.channel is not None else "-"

    def __str__(self):
        return f"{self.label}[{self.channel_label}]"


def _channel_kinds(cfg: PyramidConfig, channel: str) -> list[StatisticKind]:
    S, O = cfg.scales, cfg.orientations
    kinds = [StatisticKind("PixelMean", channel)]
    for tag in ("MagMean", "MagSecondMoment"):
        kinds += [StatisticKind(tag, channel, s, o) for s in range(S) for o in range(O)]
    kinds += [
        StatisticKind("XOrientCorr", channel, s, o1, o2)
        for s in range(S)
        for o1, o2 in itertools.combinations(range(O), 2)
    ]
    for tag in ("XScaleMagCorr", "XScalePhaseCorr"):
        kinds += [StatisticKind(tag, channel, s, o) for s in range(S - 1) for o in range(O)]
    kinds += [StatisticKind("EndStop", channel, s, o) for s in range(S) for o in range(O)]
    return kinds


def catalog(cfg: PyramidConfig = PyramidConfig(), color: bool = False) -> list[StatisticKind]:
    """Ordered list of statistic kinds for a gray or opponent-color input."""
    if not color:
        return _channel_kinds(cfg, "A")
    kinds = [k for c in CHANNELS for k in _channel_kinds(cfg, c)]
    for tag in COLOR_TAGS:
        kinds += [
            StatisticKind(tag, None, s, o, pair=pair)
            for s in range(cfg.scales)
            for o in range(cfg.orientations)
            for pair in COLOR_PAIRS
        ]
    return kinds


def statistic_count(cfg: PyramidConfig = PyramidConfig(), color: bool = False) -> int:
    S, O = cfg.scales, cfg.orientations
    per_channel = 1 + 2 * S * O + S * O * (O - 1) // 2 + 2 * (S - 1) * O + S * O
    if not color:
        return per_channel
    return 3 * per_channel + 2 * len(COLOR_PAIRS) * S * O


def end_stop_image(mag, shift: float, orientation_angle: float):
    """Squared change of a magnitude image under a shift along the edge.

    ``orientation_angle`` is the filter's frequency-domain orientation; the
    shift runs perpendicular to it, i.e. along the edges the filter detects:
    ``out(x) = (mag(x) - mag(x - shift * (cos t, sin t)))**2`` with
    ``t = orientation_angle + pi/2``, bilinear and circular.
    """
    as_numpy = not torch.is_tensor(mag)
    m = torch.from_numpy(np.asarray(mag, dtype=np.float64)) if as_numpy else mag
    t = orientation_angle + math.pi / 2
    dx, dy = shift * math.cos(t), shift * math.sin(t)
    # snap float noise so axis-aligned shifts stay integral
    dx, dy = round(dx, 12), round(dy, 12)
    out = (m - circular_shift(m, dy, dx)) ** 2
    return out.numpy() if as_numpy else out


@functools.lru_cache(maxsize=8)
def _positions(cfg: PyramidConfig, color: bool) -> dict:
    return {k: i for i, k in enumerate(catalog(cfg, color))}


def _shift_gather(shape, shift, angle):
    """Neighbour indices and bilinear weights realising :func:`end_stop_image`'s shift."""
    t = angle + math.pi / 2
    dx, dy = round(shift * math.cos(t), 12), round(shift * math.sin(t), 12)
    iy, ix = math.floor(dy), math.floor(dx)
    fy, fx = dy - iy, dx - ix
    h, w = shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    idx, wts = [], []
    for sy, wy in ((iy, 1 - fy), (iy + 1, fy)):
        for sx, wx in ((ix, 1 - fx), (ix + 1, fx)):
            idx.append((((yy - sy) % h) * w + (xx - sx) % w).ravel())
            wts.append(wy * wx)
    return np.stack(idx), np.array(wts)


@functools.lru_cache(maxsize=64)
def _end_stop_operator(shape, cfg: PyramidConfig):
    per_o = [_shift_gather(shape, cfg.end_stop_shift, cfg.orientation_angle(o)) for o in range(cfg.orientations)]
    idx = torch.from_numpy(np.stack([p[0] for p in per_o], axis=1))  # (4, O, h*w)
    wts = torch.from_numpy(np.stack([p[1] for p in per_o], axis=1))  # (4, O)
    return idx, wts


def _end_stop_stack(mag: torch.Tensor, cfg: PyramidConfig) -> torch.Tensor:
    """End-stop images for all orientations of one scale at once: ``mag`` is ``(O, h, w)``."""
    idx, wts = _end_stop_operator(tuple(mag.shape[-2:]), cfg)
    flat = mag.reshape(mag.shape[0], -1)
    shifted = sum(wts[c, :, None].to(mag.dtype) * torch.gather(flat, 1, idx[c]) for c in range(idx.shape[0]))
    return ((flat - shifted) ** 2).reshape(mag.shape)


def band_statistics(planes: torch.Tensor, cfg: PyramidConfig, color: bool):
    """Yield band-resolution statistic planes as ``(shape, catalog_index, planes)``.

    ``planes`` is ``(C, H, W)`` with C = 1 (gray) or 3 (opponent). Each piece
    holds a handful of statistics sharing one grid; the pixel means come out
    at full resolution. Indices refer to :func:`catalog`.
    """
    pos = _positions(cfg, color)
    S, O = cfg.scales, cfg.orientations
    channels = CHANNELS if color else ("A",)
    pyr = build_pyramid(planes, cfg)
    shapes = cfg.level_shapes(planes.shape[-2:])
    o1, o2 = (torch.tensor(v) for v in zip(*itertools.combinations(range(O), 2)))

    for ci, ch in enumerate(channels):
        yield shapes[0], [pos[StatisticKind("PixelMean", ch)]], planes[ci : ci + 1]
    for s in range(S):
        mags = pyr.bands[s].abs()
        for ci, ch in enumerate(channels):
            mag = mags[ci]
            yield shapes[s], [pos[StatisticKind("MagMean", ch, s, o)] for o in range(O)], mag
            yield shapes[s], [pos[StatisticKind("MagSecondMoment", ch, s, o)] for o in range(O)], mag**2
            yield shapes[s], [
                pos[StatisticKind("XOrientCorr", ch, s, a, b)] for a, b in zip(o1.tolist(), o2.tolist())
            ], mag[o1] * mag[o2]
            yield shapes[s], [pos[StatisticKind("EndStop", ch, s, o)] for o in range(O)], _end_stop_stack(mag, cfg)
        if s < S - 1:
            coarse = pyr.bands[s + 1]
            up_mag = upsample(coarse.abs(), shapes[s])
            up_pd = upsample(phase_double(coarse), shapes[s])
            for ci, ch in enumerate(channels):
                yield shapes[s], [pos[StatisticKind("XScaleMagCorr", ch, s, o)] for o in range(O)], mags[ci] * up_mag[ci]
                phase = (pyr.bands[s][ci] * up_pd[ci].conj()).real
                yield shapes[s], [pos[StatisticKind("XScalePhaseCorr", ch, s, o)] for o in range(O)], phase
            del up_mag, up_pd
        if color:
            idx = {c: i for i, c in enumerate(CHANNELS)}
            for pair in COLOR_PAIRS:
                a, b = idx[pair[0]], idx[pair[1]]
                yield shapes[s], [
                    pos[StatisticKind("XColorMagCorr", None, s, o, pair=pair)] for o in range(O)
                ], mags[a] * mags[b]
                yield shapes[s], [
                    pos[StatisticKind("XColorPhaseCorr", None, s, o, pair=pair)] for o in range(O)
                ], (pyr.bands[s][a] * pyr.bands[s][b].conj()).real
        # finished with this scale; release it early for large images
        pyr.bands[s] = None
        del mags


@dataclass(frozen=True)
class StatisticSet:
    """Full-resolution statistic images in catalog order."""

    kinds: list
    images: np.ndarray  # (K, H, W)

    @property
    def entries(self):
        return list(zip(self.kinds, self.images))

    def __len__(self):
        return len(self.kinds)

    def __getitem__(self, kind: StatisticKind) -> np.ndarray:
        return self.images[self.kinds.index(kind)]


def channel_planes(channels) -> tuple[torch.Tensor, bool]:
    """Normalize accepted inputs to a ``(C, H, W)`` tensor and a color flag."""
    if isinstance(channels, OpponentImage):
        arr = channels.stack()
    elif isinstance(channels, ImageBuffer):
        if channels.space == ColorSpace.OPPONENT:
            arr = channels.data
        elif channels.space == ColorSpace.GRAY:
            arr = channels.data
        else:
            raise ValueError(f"statistics need gray or opponent channels, got {channels.space.value}")
    elif torch.is_tensor(channels):
        t = channels if channels.ndim == 3 else channels[None]
        return t, t.shape[0] == 3
    else:
        arr = np.asarray(channels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
    if arr.shape[0] not in (1, 3):
        raise ValueError("expected 1 (gray) or 3 (opponent) channels")
    return torch.from_numpy(np.array(arr, dtype=np.float64)), arr.shape[0] == 3


def compute_statistics(channels, cfg: PyramidConfig = PyramidConfig()) -> StatisticSet:
    """Full-resolution statistic images for a gray plane or opponent image."""
    planes, color = channel_planes(channels)
    kinds = catalog(cfg, color)
    shape = tuple(planes.shape[-2:])
    out = np.empty((len(kinds),) + shape, dtype=np.float64 if planes.dtype == torch.float64 else np.float32)
    with torch.no_grad():
        for _, index, block in band_statistics(planes, cfg, color):
            out[index] = upsample(block, shape).numpy()
    return StatisticSet(kinds, out)
