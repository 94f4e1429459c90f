"""Run configuration: flat ``key = value`` files, overridable from the command line."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .descriptors import DescriptorConfig
from .pooling import GAZE, GLOBAL, UNIFORM, PoolingGeometry, fovea_radius_px
from .pyramid import PyramidConfig
from .synthesis import SynthesisConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # pyramid
    scales: int = 6
    orientations: int = 6
    end_stop_shift: float = 1.0
    # pooling
    pooling: str = UNIFORM
    diameter: float = 32.0
    rate: float = 0.5
    spacing_fraction: float = 0.25
    gaze: str = ""
    min_warped_diameter: float = 16.0
    # synthesis
    max_iters: int = 2000
    step_size: float = 0.02
    step_decay: float = 0.5
    stop_rel_change: float = 1e-5
    window: int = 50
    rng_seed: int = 0
    seed_mode: str = "noise"
    seed_path: str = ""
    optimizer: str = "lbfgs"
    dtype: str = "float32"
    # descriptors
    window_sizes: str = "32,64,128"
    windows_per_size: int = 100
    variance_floor: float = 1e-5
    contrast_epsilon: float = 1e-4
    orientation_bins: int = 16
    # viewing geometry
    screen_width_px: float = 1920.0
    field_of_view_deg: float = 29.0
    fovea_deg: float = 1.7
    # paths
    input: str = ""
    output: str = ""

    @property
    def fovea_radius(self) -> float:
        return fovea_radius_px(self.screen_width_px, self.field_of_view_deg, self.fovea_deg)

    def pyramid(self) -> PyramidConfig:
        return PyramidConfig(self.scales, self.orientations, self.end_stop_shift)

    def geometry(self) -> PoolingGeometry:
        if self.pooling == GLOBAL:
            return PoolingGeometry.global_region()
        if self.pooling == UNIFORM:
            return PoolingGeometry.uniform(self.diameter, self.spacing_fraction)
        if self.pooling == GAZE:
            if not self.gaze:
                raise ConfigError("gaze pooling needs gaze = X,Y")
            return PoolingGeometry.gaze_centric(
                parse_point(self.gaze),
                self.rate,
                self.fovea_radius,
                spacing_fraction=self.spacing_fraction,
                min_warped_diameter=self.min_warped_diameter,
            )
        raise ConfigError(f"unknown pooling mode {self.pooling!r}")

    def synthesis(self) -> SynthesisConfig:
        return SynthesisConfig(
            max_iters=self.max_iters,
            step_size=self.step_size,
            step_decay=self.step_decay,
            stop_rel_change=self.stop_rel_change,
            window=self.window,
            rng_seed=self.rng_seed,
            seed_mode=self.seed_mode,
            seed_path=self.seed_path or None,
            optimizer=self.optimizer,
            dtype=self.dtype,
        )

    def descriptors(self) -> DescriptorConfig:
        sizes = tuple(int(v) for v in self.window_sizes.split(","))
        return DescriptorConfig(
            sizes, self.windows_per_size, self.variance_floor, self.contrast_epsilon, self.orientation_bins, self.rng_seed
        )

    def updated(self, values: dict) -> "RunConfig":
        """Copy with string or typed ``values`` applied; unknown keys are rejected."""
        types = {f.name: f.type for f in dataclasses.fields(self)}
        changes = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(key, raw, types[key])
        return dataclasses.replace(self, **changes)


def _coerce(key, raw, type_name):
    if not isinstance(raw, str):
        return raw
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {type_name}, got {raw!r}") from None
    return raw


def parse_point(text: str) -> tuple[float, float]:
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"expected X,Y, got {text!r}") from None
    return x, y


def parse_config(text: str, source: str = "<config>") -> dict:
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"{source}:{n}: expected key = value")
        out[key.strip()] = value.strip()
    return out


def load_config(path, base: RunConfig = RunConfig()) -> RunConfig:
    with open(path) as fh:
        return base.updated(parse_config(fh.read(), str(path)))
