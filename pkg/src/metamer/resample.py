"""Bilinear resampling helpers with circular boundaries.

All functions are written in torch so that they can sit inside the
differentiable statistics pipeline; autograd supplies the exact adjoint of
each piecewise-linear interpolation.
"""

from __future__ import annotations

import math

import torch


def _axis_weights(n_out: int, n_in: int):
    # output sample x sits at input coordinate x * n_in / n_out
    pos = torch.arange(n_out, dtype=torch.float64) * (n_in / n_out)
    lo = torch.floor(pos)
    frac = pos - lo
    lo = lo.long() % n_in
    return lo, (lo + 1) % n_in, frac


def upsample(img: torch.Tensor, shape: tuple[int, int]) -> torch.Tensor:
    """Bilinear circular upsample of the last two dims to ``shape``.

    Input sample ``j`` is taken to sit at output coordinate ``j * n_out / n_in``
    which is where decimation by cropping the spectrum places it.
    """
    h, w = img.shape[-2:]
    if (h, w) == tuple(shape):
        return img
    y0, y1, fy = _axis_weights(shape[0], h)
    x0, x1, fx = _axis_weights(shape[1], w)
    fy = fy.to(img.real.dtype)[:, None]
    fx = fx.to(img.real.dtype)
    rows = img[..., y0, :] * (1 - fy) + img[..., y1, :] * fy
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def upsample_matrix(n_out: int, n_in: int):
    """Dense ``(n_out, n_in)`` matrix of the 1-D interpolation in :func:`upsample`."""
    lo, hi, frac = _axis_weights(n_out, n_in)
    m = torch.zeros(n_out, n_in, dtype=torch.float64)
    idx = torch.arange(n_out)
    m.index_put_((idx, lo), 1 - frac, accumulate=True)
    m.index_put_((idx, hi), frac, accumulate=True)
    return m


def circular_shift(img: torch.Tensor, dy: float, dx: float) -> torch.Tensor:
    """Return ``out(y, x) = img(y - dy, x - dx)`` with bilinear weights and wrap."""
    iy, ix = math.floor(dy), math.floor(dx)
    fy, fx = dy - iy, dx - ix
    out = 0
    for sy, wy in ((iy, 1 - fy), (iy + 1, fy)):
        if wy == 0:
            continue
        for sx, wx in ((ix, 1 - fx), (ix + 1, fx)):
            if wx == 0:
                continue
            out = out + (wy * wx) * torch.roll(img, shifts=(sy, sx), dims=(-2, -1))
    return out


def bilinear_sample(img: torch.Tensor, y: torch.Tensor, x: torch.Tensor, wrap_x: bool = False) -> torch.Tensor:
    """Sample ``img`` (..., H, W) at float coordinates ``(y, x)``.

    Rows are clamped to the valid range (edge replicate). Columns either clamp
    as well or wrap around when ``wrap_x`` is set.
    """
    h, w = img.shape[-2:]
    y = y.clamp(0, h - 1)
    y0 = torch.floor(y).clamp(max=max(h - 2, 0))
    fy = (y - y0).to(img.dtype)
    y0 = y0.long()
    y1 = (y0 + 1).clamp(max=h - 1)
    if wrap_x:
        x0 = torch.floor(x)
        fx = (x - x0).to(img.dtype)
        x0 = x0.long() % w
        x1 = (x0 + 1) % w
    else:
        x = x.clamp(0, w - 1)
        x0 = torch.floor(x).clamp(max=max(w - 2, 0))
        fx = (x - x0).to(img.dtype)
        x0 = x0.long()
        x1 = (x0 + 1).clamp(max=w - 1)
    top = img[..., y0, x0] * (1 - fx) + img[..., y0, x1] * fx
    bot = img[..., y1, x0] * (1 - fx) + img[..., y1, x1] * fx
    return top * (1 - fy) + bot * fy
