"""Experiment configuration: nested dataclasses with strict YAML round-trip.

Unknown keys are rejected so a config file always describes exactly what
will run.  Two presets exist: "desk" (240x240, quick) and "paper"
(1200x1200 full resolution).
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from ..core import HifreqError
from ..raster import PinholeDevice, RenderConfig
from ..synth import SynthConfig
from ..training import TrainConfig


class ConfigError(HifreqError):
    pass


@dataclass
class DeviceConfig:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    position: tuple = (0.0, 0.0, 0.0)
    target: tuple = (0.0, 0.0, 600.0)

    def build(self) -> PinholeDevice:
        return PinholeDevice.look_at(self.position, self.target, self.fx, self.fy,
                                     self.cx, self.cy, self.width, self.height).validate()


@dataclass
class SparseConfig:
    stride: int = 4          # px along grid lines
    noise_sigma: float = 0.1  # mm
    smoothing: float = 1e-3
    max_centers: int = 2000


@dataclass
class DomainConfig:
    """Target-domain shift knobs; all off for the plain synthetic domain."""

    albedo_texture: float = 0.0       # multiplicative field strength in [0, 1)
    shading_noise_sigma: float = 0.0  # additive, in normalized intensity


@dataclass
class EvalConfig:
    patch: int = 49
    error_scale_mm: float = 5.0  # colormap range of exported error maps


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs"
    synth: SynthConfig = field(default_factory=SynthConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    camera: DeviceConfig = field(default_factory=lambda: _desk_camera())
    projector: DeviceConfig = field(default_factory=lambda: _desk_projector())
    sparse: SparseConfig = field(default_factory=SparseConfig)
    domain: DomainConfig = field(default_factory=DomainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _desk_camera() -> DeviceConfig:
    return DeviceConfig(fx=600.0, fy=600.0, cx=119.5, cy=119.5, width=240, height=240)


def _desk_projector() -> DeviceConfig:
    return DeviceConfig(fx=600.0, fy=600.0, cx=119.5, cy=119.5, width=240, height=240,
                        position=(150.0, 0.0, 0.0))


def preset(name: str) -> ExperimentConfig:
    if name == "desk":
        return ExperimentConfig()
    if name == "paper":
        cfg = ExperimentConfig()
        cfg.camera = DeviceConfig(fx=3000.0, fy=3000.0, cx=599.5, cy=599.5,
                                  width=1200, height=1200)
        cfg.projector = DeviceConfig(fx=3000.0, fy=3000.0, cx=599.5, cy=599.5,
                                     width=1200, height=1200, position=(150.0, 0.0, 0.0))
        cfg.render = RenderConfig(hm_width=1121, hm_height=1121, mesh_pitch=0.25,
                                  grid_spacing=120, line_width=10)
        cfg.sparse = SparseConfig(stride=20, noise_sigma=0.1, smoothing=1e-3,
                                  max_centers=2000)
        return cfg
    raise ConfigError(f"unknown preset {name!r} (expected desk or paper)")


def pseudo_real_variant(cfg: ExperimentConfig) -> ExperimentConfig:
    """Shifted target domain: disjoint wave frequencies, albedo texture,
    sensor noise on shading. Stands in for real captured objects."""
    out = from_dict(to_dict(cfg))
    lo, hi = cfg.synth.freq_range
    out.synth.freq_range = (hi + 0.03, hi + 0.03 + (hi - lo))
    out.domain.albedo_texture = 0.3
    out.domain.shading_noise_sigma = 0.01
    return out


# --- strict dict/YAML round-trip ------------------------------------------

_SECTIONS = {
    "synth": SynthConfig, "render": RenderConfig, "camera": DeviceConfig,
    "projector": DeviceConfig, "sparse": SparseConfig, "domain": DomainConfig,
    "train": TrainConfig, "eval": EvalConfig,
}


def to_dict(cfg: ExperimentConfig) -> dict:
    out = {"seed": cfg.seed, "out_dir": cfg.out_dir}
    for name in _SECTIONS:
        section = getattr(cfg, name)
        out[name] = {f.name: _plain(getattr(section, f.name))
                     for f in dataclasses.fields(section)}
    return out


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _load_section(cls, data: dict, where: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in section {where!r}")
    kwargs = {}
    for key, value in data.items():
        default = fields[key].default
        if isinstance(value, list) or isinstance(default, tuple):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def from_dict(data: dict) -> ExperimentConfig:
    known = {"seed", "out_dir", *_SECTIONS}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    cfg = ExperimentConfig()
    if "seed" in data:
        cfg.seed = int(data["seed"])
    if "out_dir" in data:
        cfg.out_dir = str(data["out_dir"])
    for name, cls in _SECTIONS.items():
        if name in data:
            setattr(cfg, name, _load_section(cls, dict(data[name]), name))
    return cfg


def save_yaml(cfg: ExperimentConfig, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(to_dict(cfg), f, sort_keys=False)


def load_yaml(path) -> ExperimentConfig:
    with open(path) as f:
        data = yaml.safe_load(f)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return from_dict(data)
