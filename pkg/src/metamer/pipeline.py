"""Fused forward model: image -> pooled statistics, differentiable end to end."""

from __future__ import annotations

import numpy as np
import torch

from .image import ColorSpace, ImageBuffer, opponent_planes
from .pooling import (
    GAZE,
    PooledStatistics,
    PoolingGeometry,
    PoolingOperator,
    logpolar_map,
    logpolar_warp,
    warped_geometry,
)
from .pyramid import PyramidConfig
from .statistics import band_statistics, catalog


class StatisticsModel:
    """Maps a working-space image ``(C, H, W)`` to pooled statistics ``(K, rows, cols)``.

    The working space is image space for uniform/global pooling and the
    log-polar grid for gaze-centric pooling (see :func:`working_image`).
    Inputs are linear RGB (C=3, converted to opponent channels inside the
    model) or gray (C=1, used directly).
    """

    def __init__(self, shape, cfg: PyramidConfig, geom: PoolingGeometry, color: bool, linear_opponent: bool = False):
        self.image_shape = tuple(shape)
        self.cfg = cfg
        self.geometry = geom
        self.color = color
        self.linear_opponent = linear_opponent
        if geom.mode == GAZE:
            self.logpolar = logpolar_map(shape, geom, min_size=2**cfg.scales)
            self.shape = self.logpolar.shape
            work_geom = warped_geometry(geom, self.logpolar)
        else:
            self.logpolar = None
            self.shape = self.image_shape
            work_geom = geom
        cfg.check_shape(self.shape)
        self.operator = PoolingOperator(self.shape, work_geom)
        self.kinds = catalog(cfg, color)

    @property
    def pooled_shape(self):
        return (len(self.kinds),) + self.operator.pooled_shape

    def channels(self, image: torch.Tensor) -> torch.Tensor:
        if self.color:
            return opponent_planes(image, linear=self.linear_opponent)
        return image

    def __call__(self, image: torch.Tensor) -> torch.Tensor:
        planes = self.channels(image)
        chunks, order = [], []
        for _, index, block in band_statistics(planes, self.cfg, self.color):
            chunks.append(self.operator.apply(block))
            order.extend(index)
        # pieces come out scale-major; put rows back in catalog order
        inverse = torch.empty(len(order), dtype=torch.long)
        inverse[torch.as_tensor(order)] = torch.arange(len(order))
        return torch.cat(chunks)[inverse]


def working_image(img: ImageBuffer, model: StatisticsModel) -> torch.Tensor:
    """Tensor the model consumes: the image itself, or its log-polar warp."""
    if img.space not in (ColorSpace.GRAY, ColorSpace.LINEAR_RGB):
        raise ValueError(f"expected gray or linearRGB input, got {img.space.value}")
    t = torch.from_numpy(np.array(img.data))
    if model.logpolar is not None:
        t = logpolar_warp(t, model.logpolar)
    return t


def model_for(img: ImageBuffer, cfg: PyramidConfig, geom: PoolingGeometry, linear_opponent: bool = False):
    return StatisticsModel(img.shape, cfg, geom, img.space == ColorSpace.LINEAR_RGB, linear_opponent)


def pooled_statistics(img: ImageBuffer, cfg: PyramidConfig, geom: PoolingGeometry, dtype=torch.float64) -> PooledStatistics:
    """Pooled statistics of an image without materialising full-resolution statistic images."""
    model = model_for(img, cfg, geom)
    with torch.no_grad():
        values = model(working_image(img, model).to(dtype))
    return PooledStatistics(model.kinds, values.double().numpy(), geom)
