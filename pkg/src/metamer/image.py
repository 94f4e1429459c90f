"""Image containers, PNG I/O and color transforms.

Samples are stored planar as float64 arrays of shape ``(channels, height,
width)``. Everything downstream of :func:`load_image` works in linear light.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch

LUMINANCE_WEIGHTS = (0.2126, 0.7152, 0.0722)

# linear sRGB (D65) -> CIE XYZ
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
# white point taken from the matrix itself so that R=G=B maps exactly onto the gray axis
_WHITE = _RGB_TO_XYZ.sum(axis=1)

# fixed linear opponent matrix used in linear test mode
_LINEAR_OPPONENT = np.array(
    [
        LUMINANCE_WEIGHTS,
        [1.0, -1.0, 0.0],
        [-0.5, -0.5, 1.0],
    ]
)

_LAB_DELTA = 6.0 / 29.0


class ColorSpace(str, enum.Enum):
    SRGB8 = "sRGB8"
    LINEAR_RGB = "linearRGB"
    OPPONENT = "opponent"
    GRAY = "gray"


class ImageError(ValueError):
    """Raised for unreadable images or wrong color spaces."""


@dataclass(frozen=True)
class ImageBuffer:
    data: np.ndarray
    space: ColorSpace

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3 or not 1 <= data.shape[0] <= 3:
            raise ImageError(f"expected (channels, height, width) with 1-3 channels, got {data.shape}")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "space", ColorSpace(self.space))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape[1:]

    @classmethod
    def gray(cls, plane) -> "ImageBuffer":
        return cls(np.asarray(plane, dtype=np.float64)[None], ColorSpace.GRAY)

    @classmethod
    def rgb(cls, planes) -> "ImageBuffer":
        return cls(np.asarray(planes, dtype=np.float64), ColorSpace.LINEAR_RGB)


@dataclass(frozen=True)
class OpponentImage:
    achromatic: np.ndarray
    red_green: np.ndarray
    blue_yellow: np.ndarray

    def stack(self) -> np.ndarray:
        return np.stack([self.achromatic, self.red_green, self.blue_yellow])


def srgb_decode(v):
    """sRGB electro-optical transfer: encoded [0, 1] -> linear [0, 1]."""
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def srgb_encode(v):
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    return np.where(v <= 0.0031308, v * 12.92, 1.055 * v ** (1.0 / 2.4) - 0.055)


def load_image(path) -> ImageBuffer:
    """Read an 8- or 16-bit PNG and decode it to linear light.

    Grayscale files become ``gray`` buffers, RGB(A) files ``linearRGB``
    (alpha is dropped).
    """
    path = Path(path)
    if not path.is_file():
        raise ImageError(f"cannot read image: {path} does not exist")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ImageError(f"cannot read image: {path} is not a readable PNG")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise ImageError(f"{path}: unsupported sample type {raw.dtype}; need 8 or 16 bit")

    if raw.ndim == 2:
        planes, space = raw[None], ColorSpace.GRAY
    elif raw.ndim == 3 and raw.shape[2] in (3, 4):
        # cv2 hands back BGR(A)
        planes, space = raw[:, :, 2::-1].transpose(2, 0, 1), ColorSpace.LINEAR_RGB
    else:
        raise ImageError(f"{path}: unsupported channel layout {raw.shape}")
    return ImageBuffer(srgb_decode(planes.astype(np.float64) / scale), space)


def save_image(img: ImageBuffer, path) -> None:
    """Write a 16-bit sRGB-encoded PNG, clamping values to [0, 1]."""
    data = img.data
    if not np.all(np.isfinite(data)):
        raise ImageError("refusing to save non-finite samples")
    if img.space not in (ColorSpace.GRAY, ColorSpace.LINEAR_RGB):
        raise ImageError(f"can only save gray or linearRGB buffers, got {img.space.value}")
    if img.channels == 2:
        raise ImageError("two-channel buffers cannot be written as PNG")
    coded = np.round(srgb_encode(data) * 65535.0).astype(np.uint16)
    out = coded[0] if img.channels == 1 else coded[::-1].transpose(1, 2, 0)
    path = Path(path)
    try:
        ok = cv2.imwrite(str(path), np.ascontiguousarray(out))
    except cv2.error as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc
    if not ok:
        raise ImageError(f"cannot write {path}")


def _require(img: ImageBuffer, space: ColorSpace):
    if img.space != space:
        raise ImageError(f"expected a {space.value} image, got {img.space.value}")


def to_luminance(img: ImageBuffer) -> ImageBuffer:
    _require(img, ColorSpace.LINEAR_RGB)
    w = np.asarray(LUMINANCE_WEIGHTS)
    return ImageBuffer.gray(np.tensordot(w, img.data, axes=1))


def _lab_f(t):
    return torch.where(
        t > _LAB_DELTA**3,
        torch.clamp(t, min=_LAB_DELTA**3) ** (1.0 / 3.0),
        t / (3 * _LAB_DELTA**2) + 4.0 / 29.0,
    )


def opponent_planes(rgb: torch.Tensor, linear: bool = False) -> torch.Tensor:
    """Differentiable linear RGB -> (achromatic, red-green, blue-yellow).

    ``rgb`` has shape ``(3, H, W)``. The standard mode goes through CIELAB
    and returns ``(L*/100, a*/128, b*/128)``; ``linear=True`` swaps in a fixed
    linear opponent matrix.
    """
    if linear:
        m = torch.as_tensor(_LINEAR_OPPONENT, dtype=rgb.dtype)
        return torch.einsum("ij,jhw->ihw", m, rgb)
    m = torch.as_tensor(_RGB_TO_XYZ / _WHITE[:, None], dtype=rgb.dtype)
    fx, fy, fz = _lab_f(torch.einsum("ij,jhw->ihw", m, rgb))
    lightness = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return torch.stack([lightness / 100.0, a / 128.0, b / 128.0])


def to_opponent(img: ImageBuffer, linear: bool = False) -> OpponentImage:
    _require(img, ColorSpace.LINEAR_RGB)
    if img.channels != 3:
        raise ImageError("opponent transform needs three channels")
    out = opponent_planes(torch.from_numpy(np.array(img.data)), linear=linear).numpy()
    return OpponentImage(*out)
