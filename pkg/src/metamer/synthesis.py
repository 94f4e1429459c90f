"""Metamer synthesis by gradient descent on pooled-statistic mismatch."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy.optimize import Bounds, minimize

from .image import ImageBuffer, load_image
from .pipeline import StatisticsModel, model_for, working_image
from .pooling import GAZE, PooledStatistics, PoolingGeometry, logpolar_unwarp
from .pyramid import PyramidConfig

log = logging.getLogger(__name__)

WEIGHT_EPS = 1e-8
_DTYPES = {"float32": torch.float32, "float64": torch.float64}
LBFGS_HISTORY = 20  # curvature pairs kept by L-BFGS-B


class SynthesisError(RuntimeError):
    pass


class NumericalAbort(SynthesisError):
    """Loss went non-finite; ``trace`` holds the iterations completed so far."""

    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


@dataclass(frozen=True)
class SynthesisConfig:
    max_iters: int = 2000
    step_size: float = 0.02
    step_decay: float = 0.5
    stop_rel_change: float = 1e-5
    window: int = 50
    rng_seed: int = 0
    weight_mode: str = "target_scale"
    seed_mode: str = "noise"
    seed_path: str | None = None
    optimizer: str = "lbfgs"
    dtype: str = "float32"

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0 < self.step_decay < 1:
            raise ValueError("step_decay must be in (0, 1)")
        if self.seed_mode not in ("noise", "image"):
            raise ValueError(f"unknown seed_mode {self.seed_mode!r}")
        if self.seed_mode == "image" and not self.seed_path:
            raise ValueError("seed_mode='image' needs seed_path")
        if self.optimizer not in ("lbfgs", "gd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.weight_mode != "target_scale":
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")


@dataclass
class TraceRecord:
    iteration: int
    loss: float
    step: float
    max_update: float


@dataclass
class SynthesisTrace:
    records: list = field(default_factory=list)
    kind_errors: dict = field(default_factory=dict)
    final_loss: float = math.nan

    @property
    def losses(self) -> list:
        return [r.loss for r in self.records]

    def __len__(self):
        return len(self.records)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss", "step", "max_update"])
            for r in self.records:
                w.writerow([r.iteration, repr(r.loss), repr(r.step), repr(r.max_update)])
            w.writerow([])
            w.writerow(["final_loss", repr(self.final_loss)])
            if self.kind_errors:
                w.writerow([])
                w.writerow(["kind", "relative_rms_error"])
                for kind, err in self.kind_errors.items():
                    w.writerow([kind, repr(err)])


def kind_weights(target) -> torch.Tensor | np.ndarray:
    """Per-kind weights ``1 / (mean(target**2) + eps)`` for pooled values ``(K, rows, cols)``."""
    if torch.is_tensor(target):
        return 1.0 / (target.square().mean(dim=(-2, -1)) + WEIGHT_EPS)
    t = np.asarray(target)
    return 1.0 / (np.mean(t**2, axis=(-2, -1)) + WEIGHT_EPS)


def _values(p):
    return p.values if isinstance(p, PooledStatistics) else p


def loss(candidate, target, weights=None):
    """Weighted squared mismatch ``sum_k w_k * sum (c - t)**2`` over pooled stacks."""
    if isinstance(candidate, PooledStatistics) and isinstance(target, PooledStatistics):
        if [str(k) for k in candidate.kinds] != [str(k) for k in target.kinds]:
            raise SynthesisError("candidate and target catalogs differ")
        if candidate.geometry != target.geometry:
            raise SynthesisError("candidate and target pooling geometries differ")
    c, t = _values(candidate), _values(target)
    if c.shape != t.shape:
        raise SynthesisError(f"pooled shapes differ: {tuple(c.shape)} vs {tuple(t.shape)}")
    if weights is None:
        weights = kind_weights(t)
    if torch.is_tensor(c):
        return (weights * (c - t).square().sum(dim=(-2, -1))).sum()
    return float(np.sum(np.asarray(weights) * np.sum((np.asarray(c) - np.asarray(t)) ** 2, axis=(-2, -1))))


def relative_errors(candidate, target) -> np.ndarray:
    """Per-kind relative RMS mismatch ``rms(c - t) / rms(t)``."""
    c, t = np.asarray(_values(candidate)), np.asarray(_values(target))
    num = np.sqrt(np.mean((c - t) ** 2, axis=(-2, -1)))
    den = np.sqrt(np.mean(t**2, axis=(-2, -1)))
    return num / np.maximum(den, 1e-12)


def _loss_and_grad(model: StatisticsModel, x: torch.Tensor, target: torch.Tensor, weights: torch.Tensor):
    x = x.detach().requires_grad_(True)
    value = loss(model(x), target, weights)
    (grad,) = torch.autograd.grad(value, x)
    return value.detach(), grad


def gradient(
    candidate: ImageBuffer,
    target_pooled,
    geom: PoolingGeometry,
    cfg: PyramidConfig = PyramidConfig(),
    weights=None,
) -> np.ndarray:
    """d(loss)/d(pixel) for every pixel of the candidate's working image, float64."""
    model = model_for(candidate, cfg, geom)
    x = working_image(candidate, model)
    target = torch.as_tensor(np.asarray(_values(target_pooled)), dtype=torch.float64)
    if target.shape != model.pooled_shape:
        raise SynthesisError(f"target pooled shape {tuple(target.shape)} does not match {model.pooled_shape}")
    w = kind_weights(target) if weights is None else torch.as_tensor(np.asarray(weights), dtype=torch.float64)
    _, grad = _loss_and_grad(model, x, target, w)
    return grad.numpy()


def seed_image(target: ImageBuffer, cfg: SynthesisConfig) -> ImageBuffer:
    """Starting point: matched Gaussian noise, or an image loaded from ``cfg.seed_path``."""
    if cfg.seed_mode == "image":
        return load_image(cfg.seed_path)
    rng = np.random.default_rng(cfg.rng_seed)
    data = target.data
    mean = data.mean(axis=(1, 2), keepdims=True)
    std = data.std(axis=(1, 2), keepdims=True)
    noise = mean + std * rng.standard_normal(data.shape)
    return ImageBuffer(np.clip(noise, 0.0, 1.0), target.space)


def _fovea_blend(metamer: np.ndarray, original: np.ndarray, geom: PoolingGeometry) -> np.ndarray:
    h, w = original.shape[-2:]
    y, x = np.mgrid[0:h, 0:w]
    ecc = np.hypot(x - geom.gaze[0], y - geom.gaze[1])
    r0 = geom.fovea_radius
    keep = np.clip((1.1 * r0 - ecc) / (0.1 * r0), 0.0, 1.0)
    return keep * original + (1 - keep) * metamer


class _Stop(Exception):
    pass


class _Run:
    """Evaluates candidates, keeps the trace, the best candidate and the stopping state.

    Every evaluated image is clamped to [0, 1] (a no-op for the bounded
    quasi-Newton method, whose iterates never leave the box).
    """

    def __init__(self, model, target, weights, cfg: SynthesisConfig):
        self.model, self.target, self.weights, self.cfg = model, target, weights, cfg
        self.trace = SynthesisTrace()
        self.step = cfg.step_size
        self.best_loss, self.best_x = math.inf, None
        self._prev = None
        self._last_check = 0

    def evaluate(self, y: torch.Tensor):
        it = len(self.trace)
        if it >= self.cfg.max_iters:
            raise _Stop
        y = y.detach().requires_grad_(True)
        x = y.clamp(0.0, 1.0)
        value = loss(self.model(x), self.target, self.weights)
        v = float(value.detach())
        if not math.isfinite(v):
            raise NumericalAbort(f"non-finite loss at iteration {it}", self.trace)
        (grad,) = torch.autograd.grad(value, y)
        x = x.detach()
        max_update = 0.0 if self._prev is None else float((x - self._prev).abs().max())
        self.trace.records.append(TraceRecord(it, v, self.step, max_update))
        self._prev = x
        if v < self.best_loss:
            self.best_loss, self.best_x = v, x
        return value.detach(), grad

    def converged(self) -> bool:
        if self.best_loss == 0.0:
            return True
        losses, w = self.trace.losses, self.cfg.window
        if len(losses) < 2 * w or len(losses) - self._last_check < w:
            return False
        self._last_check = len(losses)
        before, after = float(np.mean(losses[-2 * w : -w])), float(np.mean(losses[-w:]))
        self.plateau = after >= before
        return before > 0 and abs(before - after) / before < self.cfg.stop_rel_change

    plateau = False


def _first_order(run: _Run, x: torch.Tensor, adam: bool):
    m = torch.zeros_like(x)
    v = torch.zeros_like(x)
    beta1, beta2 = 0.9, 0.999
    for it in range(run.cfg.max_iters):
        _, grad = run.evaluate(x)
        if run.converged():
            return
        if run.plateau:
            run.step *= run.cfg.step_decay
            run.plateau = False
            log.info("iteration %d: plateau, step -> %g", it, run.step)
        if adam:
            m = beta1 * m + (1 - beta1) * grad
            v = beta2 * v + (1 - beta2) * grad.square()
            direction = (m / (1 - beta1 ** (it + 1))) / ((v / (1 - beta2 ** (it + 1))).sqrt() + 1e-12)
        else:
            direction = grad / grad.abs().max().clamp_min(1e-30)
        x = (x - run.step * direction).clamp(0.0, 1.0)


def _lbfgs(run: _Run, x: torch.Tensor):
    shape, dtype, n = x.shape, x.dtype, x.numel()

    def fun(v):
        value, grad = run.evaluate(torch.from_numpy(v.reshape(shape)).to(dtype))
        if run.converged():
            raise _Stop
        return float(value), grad.double().numpy().ravel()

    # scipy may stop early on a failed line search; the best candidate so far stands
    minimize(
        fun,
        x.double().numpy().ravel(),
        jac=True,
        method="L-BFGS-B",
        bounds=Bounds(np.zeros(n), np.ones(n)),
        options=dict(maxfun=run.cfg.max_iters, maxiter=run.cfg.max_iters, maxcor=LBFGS_HISTORY, ftol=0.0, gtol=0.0),
    )


def synthesize(
    target: ImageBuffer,
    geom: PoolingGeometry,
    cfg: SynthesisConfig = SynthesisConfig(),
    pyramid: PyramidConfig = PyramidConfig(),
) -> tuple[ImageBuffer, SynthesisTrace]:
    """Adjust a seed image until its pooled statistics match the target's.

    One iteration is one loss and gradient evaluation. ``lbfgs`` (the
    default) is bound-constrained L-BFGS-B over the box [0, 1];
    ``gd`` (max-norm steepest descent) and ``adam`` clamp after each step and take
    first-order steps of ``step_size``, multiplied by ``step_decay`` whenever
    the mean loss over the last ``window`` iterations fails to improve on the
    window before. Every optimizer stops after ``max_iters`` iterations or
    once that windowed relative improvement falls below ``stop_rel_change``.

    The returned image is the lowest-loss candidate evaluated, and
    ``trace.final_loss`` is its loss. In gaze mode the optimisation runs on
    the log-polar grid; the result is unwarped once and the fovea is copied
    from the target with a linear blend over the outer 10% of its radius.
    """
    dtype = _DTYPES[cfg.dtype]
    model = model_for(target, pyramid, geom)
    seed = seed_image(target, cfg)
    if seed.space != target.space:
        raise SynthesisError(f"seed image is {seed.space.value} but target is {target.space.value}")
    if seed.shape != target.shape:
        raise SynthesisError(f"seed is {seed.shape} but target is {target.shape}")

    with torch.no_grad():
        target_pooled = model(working_image(target, model).to(dtype))
        weights = kind_weights(target_pooled)
        x = working_image(seed, model).to(dtype).clamp(0.0, 1.0)

    run = _Run(model, target_pooled, weights, cfg)
    try:
        if cfg.optimizer == "lbfgs":
            _lbfgs(run, x)
        else:
            _first_order(run, x, cfg.optimizer == "adam")
    except _Stop:
        pass

    trace = run.trace
    trace.final_loss = run.best_loss
    with torch.no_grad():
        final_pooled = model(run.best_x)
    errs = relative_errors(final_pooled.double().numpy(), target_pooled.double().numpy())
    trace.kind_errors = {str(k): float(e) for k, e in zip(model.kinds, errs)}

    out = run.best_x.double().numpy()
    if geom.mode == GAZE:
        out = logpolar_unwarp(out, model.logpolar, target.shape)
        out = _fovea_blend(out, target.data, geom)
    return ImageBuffer(out, target.space), trace


@dataclass
class GradCheckReport:
    max_rel_error: float
    median_rel_error: float
    tolerance: float
    pixels: int
    passed: bool

    def format(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} max_rel_error={self.max_rel_error:.3e} "
            f"median_rel_error={self.median_rel_error:.3e} tolerance={self.tolerance:g} pixels={self.pixels}"
        )


def grad_check(
    size: int = 16,
    cfg: PyramidConfig = PyramidConfig(scales=4, orientations=4),
    tolerance: float = 1e-3,
    geom: PoolingGeometry | None = None,
    n_pixels: int = 100,
    h: float = 1e-3,
    seed: int = 0,
) -> GradCheckReport:
    """Compare the reverse-mode gradient with central finite differences.

    Target and candidate are independent uniform-noise gray images of
    ``size`` x ``size``; the comparison uses ``n_pixels`` random pixels. A
    pixel's error is ``|g - fd| / max(|g|, |fd|, 1e-6 * max|g|)``. Passes
    when the largest error is strictly below ``tolerance``.
    """
    if size > 64:
        raise ValueError("grad_check is limited to size <= 64")
    geom = geom or PoolingGeometry.global_region()
    rng = np.random.default_rng(seed)
    target = ImageBuffer.gray(rng.uniform(0.2, 0.8, (size, size)))
    candidate = ImageBuffer.gray(rng.uniform(0.2, 0.8, (size, size)))

    model = model_for(target, cfg, geom)
    with torch.no_grad():
        target_pooled = model(working_image(target, model))
    weights = kind_weights(target_pooled)
    x = working_image(candidate, model)
    _, grad = _loss_and_grad(model, x, target_pooled, weights)
    grad = grad.numpy()

    flat = rng.choice(x.numel(), size=min(n_pixels, x.numel()), replace=False)
    fd = np.empty(len(flat))
    with torch.no_grad():
        for i, p in enumerate(flat):
            idx = np.unravel_index(p, tuple(x.shape))
            xp, xm = x.clone(), x.clone()
            xp[idx] += h
            xm[idx] -= h
            fd[i] = (float(loss(model(xp), target_pooled, weights)) - float(loss(model(xm), target_pooled, weights))) / (2 * h)
    g = grad.reshape(-1)[flat]
    floor = 1e-6 * np.abs(grad).max()
    rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)
    max_err = float(rel.max())
    return GradCheckReport(max_err, float(np.median(rel)), tolerance, len(flat), bool(max_err < tolerance))
