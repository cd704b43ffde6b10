"""Pipeline configuration: one JSON file, command-line flags override it."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from .baselines import FovPolicy
from .geometry import SphericalCameraModel, camera_mount
from .mapping import SolverConfig
from .primitives import MarginPolicy
from .render import RenderConfig
from .synthetic import CameraRig, NoiseSpec, SceneSpec


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LidarSettings:
    width: int = 1812
    height: int = 128
    azimuth_range_deg: Tuple[float, float] = (-180.0, 180.0)
    elevation_range_deg: Tuple[float, float] = (-25.0, 15.0)

    def model(self) -> SphericalCameraModel:
        return SphericalCameraModel(
            self.width,
            self.height,
            tuple(math.radians(a) for a in self.azimuth_range_deg),
            tuple(math.radians(e) for e in self.elevation_range_deg),
        )


@dataclass(frozen=True)
class CameraSettings:
    width: int = 4096
    height: int = 1536
    horizontal_fov_deg: float = 100.0
    mount_offset: Tuple[float, float, float] = (0.5, 0.0, -0.3)
    mount_yaw_deg: float = 0.0

    def rig(self) -> CameraRig:
        return CameraRig(
            self.width,
            self.height,
            math.radians(self.horizontal_fov_deg),
            camera_mount(self.mount_offset, math.radians(self.mount_yaw_deg)),
        )


@dataclass(frozen=True)
class PipelineConfig:
    lidar: LidarSettings = LidarSettings()
    camera: CameraSettings = CameraSettings()
    range_threshold: float = 50.0
    sampling_hz: float = 10.0
    motion_compensation: bool = True
    eval_stride: int = 5
    margins: MarginPolicy = MarginPolicy()
    render: RenderConfig = RenderConfig()
    solver: SolverConfig = SolverConfig()
    fov: FovPolicy = FovPolicy()
    scene: SceneSpec = SceneSpec()
    noise: NoiseSpec = NoiseSpec()
    seed: int = 1

    def __post_init__(self):
        if self.range_threshold <= 0:
            raise ConfigError("range_threshold must be positive")
        if self.sampling_hz <= 0 or self.sampling_hz > 10.0:
            raise ConfigError("sampling_hz must be in (0, 10]")
        if self.eval_stride < 1:
            raise ConfigError("eval_stride must be >= 1")
        if self.render.dilation != self.margins.pixel_dilation:
            raise ConfigError("render.dilation contradicts margins.pixel_dilation")
        if self.render.range_threshold != self.range_threshold:
            object.__setattr__(self, "render", dataclasses.replace(self.render, range_threshold=self.range_threshold))
        if self.scene.seed != self.seed:
            object.__setattr__(self, "scene", dataclasses.replace(self.scene, seed=self.seed))


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _from_plain(cls, data: Dict[str, Any], path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise ConfigError(f"unknown config key {path + key!r}")
        current = getattr(defaults, key)
        if dataclasses.is_dataclass(current):
            kwargs[key] = _from_plain(type(current), value, f"{path}{key}.")
        elif isinstance(current, tuple):
            kwargs[key] = tuple(value)
        elif isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path + key}: expected a boolean")
            kwargs[key] = value
        elif isinstance(current, (int, float)) and not isinstance(value, (int, float)):
            raise ConfigError(f"{path + key}: expected a number")
        else:
            kwargs[key] = type(current)(value) if isinstance(current, (int, float)) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def config_to_dict(cfg: PipelineConfig) -> Dict[str, Any]:
    return _to_plain(cfg)


def config_from_dict(data: Dict[str, Any]) -> PipelineConfig:
    return _from_plain(PipelineConfig, data)


def load_config(path: Optional[os.PathLike] = None, overrides: Optional[Dict[str, Any]] = None) -> PipelineConfig:
    """Defaults, then the file, then ``overrides`` (dotted keys) in that order."""
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
    for dotted, value in (overrides or {}).items():
        node = data
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return config_from_dict(data)


def save_config(cfg: PipelineConfig, path: os.PathLike) -> None:
    Path(path).write_text(json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n")


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("XDMAP_WORKERS", "")
    try:
        return max(1, int(raw)) if raw else default
    except ValueError as exc:
        raise ConfigError(f"XDMAP_WORKERS must be an integer, got {raw!r}") from exc
