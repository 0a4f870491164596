"""Procedural wavy surfaces and randomized scene composition.

A surface is a sum of directed cosine waves evaluated on a regular grid of
physical coordinates (origin at the grid center, spacing `pitch` mm/px):

    H(x, y) = sum_i  alpha_i * cos(2*pi * x' * freq_i + psi_i)
    x'      = x * cos(theta_i) + y * sin(theta_i)

`freq` is a spatial frequency in cycles/mm.  A scene adds a pose (rotation
of the height-field plane about its own center plus a standoff distance),
a directional light constrained to a one-sided cone, an albedo, and a
per-scene projector position shift.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import HifreqError, Rng, TriangleMesh, euler_rotation


class BadParams(HifreqError):
    pass


class EmptyRange(HifreqError):
    pass


class DegenerateGrid(HifreqError):
    pass


@dataclass
class SinusoidTerm:
    alpha: float  # amplitude, mm
    freq: float   # spatial frequency, cycles/mm
    psi: float    # phase, rad
    theta: float  # wave direction, rad


@dataclass
class SinusoidParams:
    terms: list[SinusoidTerm]

    @property
    def n(self) -> int:
        return len(self.terms)

    def validate(self) -> "SinusoidParams":
        if self.n < 1:
            raise BadParams("need at least one wave")
        for t in self.terms:
            if t.freq <= 0:
                raise BadParams(f"frequency must be positive, got {t.freq}")
            if t.alpha < 0:
                raise BadParams(f"amplitude must be >= 0, got {t.alpha}")
        return self


@dataclass
class ScenePose:
    base_depth: float  # mm, surface center distance from camera
    pitch: float = 0.0  # rad, about x
    yaw: float = 0.0    # rad, about y
    roll: float = 0.0   # rad, about z

    def rotation(self) -> np.ndarray:
        return euler_rotation(self.pitch, self.yaw, self.roll)


@dataclass
class SceneSpec:
    params: SinusoidParams
    pose: ScenePose
    light_dir: np.ndarray      # unit vector, direction light travels (toward scene)
    albedo: float
    projector_shift: np.ndarray  # mm, added to the projector position
    seed: int

    def __post_init__(self):
        self.light_dir = np.asarray(self.light_dir, dtype=np.float64).reshape(3)
        self.projector_shift = np.asarray(self.projector_shift, dtype=np.float64).reshape(3)

    def validate(self) -> "SceneSpec":
        if abs(np.linalg.norm(self.light_dir) - 1.0) > 1e-9:
            raise HifreqError("light_dir is not unit length")
        if not (0.0 < self.albedo <= 1.0):
            raise HifreqError(f"albedo {self.albedo} outside (0, 1]")
        self.params.validate()
        return self


@dataclass
class SynthConfig:
    """Parameter ranges for random scene sampling. All (lo, hi) inclusive."""

    n_terms: int = 2
    alpha_range: tuple = (0.5, 2.0)       # mm
    freq_range: tuple = (0.06, 0.15)      # cycles/mm
    psi_range: tuple = (0.0, 2.0 * math.pi)
    theta_range: tuple = (0.0, math.pi)
    pitch_limit: float = math.radians(10.0)
    yaw_limit: float = math.radians(10.0)
    roll_limit: float = math.pi
    base_depth: float = 600.0             # mm
    albedo_range: tuple = (0.6, 0.95)
    light_elevation: float = math.radians(35.0)  # tilt of light from the optical axis
    light_azimuth_range: tuple = (0.0, 0.0)      # one-sided cone; fixed direction by default
    projector_shift_limit: tuple = (30.0, 30.0, 15.0)  # mm, per-axis +-limit

    def ranges(self) -> dict:
        return {
            "alpha": self.alpha_range,
            "freq": self.freq_range,
            "psi": self.psi_range,
            "theta": self.theta_range,
            "pose.pitch": (-self.pitch_limit, self.pitch_limit),
            "pose.yaw": (-self.yaw_limit, self.yaw_limit),
            "pose.roll": (-self.roll_limit, self.roll_limit),
            "albedo": self.albedo_range,
            "light_azimuth": self.light_azimuth_range,
        }

    def validate(self) -> "SynthConfig":
        if self.n_terms < 1:
            raise EmptyRange("n_terms must be >= 1")
        for name, (lo, hi) in self.ranges().items():
            if lo > hi:
                raise EmptyRange(f"range {name} has min > max ({lo} > {hi})")
        if any(l < 0 for l in self.projector_shift_limit):
            raise EmptyRange("projector shift limits must be >= 0")
        return self


def light_direction(elevation: float, azimuth: float) -> np.ndarray:
    """Unit direction of light travel for a source tilted off the +z axis."""
    se, ce = math.sin(elevation), math.cos(elevation)
    return np.array([se * math.cos(azimuth), se * math.sin(azimuth), ce])


def grid_coords(width: int, height: int, pitch: float):
    """Physical (x, y) coordinate grids, origin at the grid center."""
    x = (np.arange(width, dtype=np.float64) - (width - 1) / 2.0) * pitch
    y = (np.arange(height, dtype=np.float64) - (height - 1) / 2.0) * pitch
    return np.meshgrid(x, y)


def height_map(params: SinusoidParams, width: int, height: int, pitch: float) -> np.ndarray:
    """Evaluate the wave sum on a (height, width) grid. Returns mm heights."""
    if width < 2 or height < 2:
        raise DegenerateGrid(f"grid {width}x{height} too small")
    if pitch <= 0:
        raise BadParams("pitch must be positive")
    params.validate()
    X, Y = grid_coords(width, height, pitch)
    H = np.zeros((height, width), dtype=np.float64)
    for t in params.terms:
        xprime = X * math.cos(t.theta) + Y * math.sin(t.theta)
        H += t.alpha * np.cos(2.0 * math.pi * xprime * t.freq + t.psi)
    return H


def height_gradient(params: SinusoidParams, x, y):
    """Analytic (dH/dx, dH/dy) at physical coordinates; arrays broadcast."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    gx = np.zeros(np.broadcast(x, y).shape, dtype=np.float64)
    gy = np.zeros_like(gx)
    for t in params.terms:
        xprime = x * math.cos(t.theta) + y * math.sin(t.theta)
        d = -t.alpha * 2.0 * math.pi * t.freq * np.sin(2.0 * math.pi * xprime * t.freq + t.psi)
        gx += d * math.cos(t.theta)
        gy += d * math.sin(t.theta)
    return gx, gy


def surface_normal(params: SinusoidParams, x, y) -> np.ndarray:
    """Analytic unit surface normal (camera-facing, nz < 0) in the plane frame."""
    gx, gy = height_gradient(params, x, y)
    n = np.stack([gx, gy, -np.ones_like(gx)], axis=-1)
    return n / np.linalg.norm(n, axis=-1, keepdims=True)


def sample_scene(rng: Rng, cfg: SynthConfig) -> SceneSpec:
    """Draw one SceneSpec with every field uniform over its configured range."""
    cfg.validate()
    terms = []
    for _ in range(cfg.n_terms):
        terms.append(SinusoidTerm(
            alpha=float(rng.uniform(*cfg.alpha_range)),
            freq=float(rng.uniform(*cfg.freq_range)),
            psi=float(rng.uniform(*cfg.psi_range)),
            theta=float(rng.uniform(*cfg.theta_range)),
        ))
    pose = ScenePose(
        base_depth=cfg.base_depth,
        pitch=float(rng.uniform(-cfg.pitch_limit, cfg.pitch_limit)),
        yaw=float(rng.uniform(-cfg.yaw_limit, cfg.yaw_limit)),
        roll=float(rng.uniform(-cfg.roll_limit, cfg.roll_limit)),
    )
    azimuth = float(rng.uniform(*cfg.light_azimuth_range))
    shift = np.array([rng.uniform(-l, l) for l in cfg.projector_shift_limit])
    return SceneSpec(
        params=SinusoidParams(terms),
        pose=pose,
        light_dir=light_direction(cfg.light_elevation, azimuth),
        albedo=float(rng.uniform(*cfg.albedo_range)),
        projector_shift=shift,
        seed=rng.seed,
    ).validate()


def height_map_to_mesh(h: np.ndarray, pose: ScenePose, pitch: float) -> TriangleMesh:
    """Triangulate a height map into a world-space mesh.

    Vertices sit at pose.rotation() @ (x, y, H) + (0, 0, base_depth), i.e.
    the plane is rotated about its own center and pushed out to the standoff
    distance.  Each grid quad splits into two triangles; per-vertex normals
    are the normalized sum of adjacent face normals (area weighted).
    """
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
        raise DegenerateGrid(f"height map {h.shape} too small to triangulate")
    rows, cols = h.shape
    X, Y = grid_coords(cols, rows, pitch)
    local = np.stack([X, Y, h], axis=-1).reshape(-1, 3)
    R = pose.rotation()
    verts = local @ R.T
    verts[:, 2] += pose.base_depth

    idx = np.arange(rows * cols).reshape(rows, cols)
    tl = idx[:-1, :-1].ravel()
    bl = idx[1:, :-1].ravel()
    tr = idx[:-1, 1:].ravel()
    br = idx[1:, 1:].ravel()
    # winding chosen so flat maps get normals (0, 0, -1), toward the camera
    faces = np.concatenate([
        np.stack([tl, bl, tr], axis=1),
        np.stack([tr, bl, br], axis=1),
    ]).astype(np.int32)

    v0 = verts[faces[:, 0]]
    fn = np.cross(verts[faces[:, 1]] - v0, verts[faces[:, 2]] - v0)
    normals = np.zeros_like(verts)
    for k in range(3):
        np.add.at(normals, faces[:, k], fn)
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    normals /= np.maximum(norms, 1e-30)
    return TriangleMesh(verts, faces, normals)
