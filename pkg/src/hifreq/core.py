"""Shared numeric containers and geometry primitives.

Conventions used across the package:
  - world units are millimeters, pixel grids are row-major (H, W)
  - right-handed coordinates, camera at the origin looking down +z,
    x to the right, y down (image convention)
  - reductions accumulate in float64 even when storage is float32
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HifreqError(Exception):
    """Base class for all contract violations raised by this package."""


class ZeroDim(HifreqError):
    pass


class NonFinite(HifreqError):
    pass


class EmptyMask(HifreqError):
    pass


# ---------------------------------------------------------------------------
# tensors
#
# Dense arrays are plain numpy ndarrays in C (row-major) order.  float64 is
# the default; float32 is permitted for network weights and activations.

def tensor_new(shape, fill: float = 0.0, dtype=np.float64) -> np.ndarray:
    """Allocate a row-major tensor of `shape` filled with `fill`."""
    shape = tuple(int(d) for d in shape)
    if any(d < 1 for d in shape):
        raise ZeroDim(f"tensor shape {shape} has a zero or negative dim")
    return np.full(shape, fill, dtype=dtype, order="C")


def assert_finite(a: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFinite(f"{what} contains NaN/Inf")
    return a


# ---------------------------------------------------------------------------
# depth maps

@dataclass
class DepthMap:
    """Dense depth field in millimeters with a {0,1} validity mask.

    Depth values are meaningful only where mask == 1; the array content
    under mask == 0 is ignored by every consumer (we store 0 there when
    serializing).
    """

    depth: np.ndarray  # (H, W) float
    mask: np.ndarray   # (H, W) float, entries in {0, 1}

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.depth.shape != self.mask.shape or self.depth.ndim != 2:
            raise HifreqError(f"depth {self.depth.shape} / mask {self.mask.shape} mismatch")
        if self.depth.shape[0] < 1 or self.depth.shape[1] < 1:
            raise ZeroDim("empty depth map")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def valid(self) -> np.ndarray:
        """Boolean view of the mask."""
        return self.mask > 0.5

    def validate(self) -> "DepthMap":
        if not np.all(np.isfinite(self.depth[self.valid])):
            raise NonFinite("depth has NaN/Inf inside the valid mask")
        vals = np.unique(self.mask)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            raise HifreqError("mask entries must be 0 or 1")
        return self

    def copy(self) -> "DepthMap":
        return DepthMap(self.depth.copy(), self.mask.copy())


# ---------------------------------------------------------------------------
# rigid transforms

ORTHO_TOL = 1e-9


@dataclass
class RigidTransform:
    """Rotation + translation, mapping points as R @ p + t (millimeters)."""

    rotation: np.ndarray     # (3, 3) orthonormal, det +1
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)

    def validate(self, tol: float = ORTHO_TOL) -> "RigidTransform":
        R = self.rotation
        if np.max(np.abs(R @ R.T - np.eye(3))) > tol:
            raise HifreqError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > tol:
            raise HifreqError("rotation has det != +1")
        return self

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform a point (3,) or an array of points (..., 3)."""
        p = np.asarray(p, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply `other` first, then `self`."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))


def transform_point(t: RigidTransform, p) -> np.ndarray:
    """R @ p + translation."""
    return t.apply(p)


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=np.float64)


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float64)


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=np.float64)


def euler_rotation(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Rotation applied as roll(z) ∘ yaw(y) ∘ pitch(x)."""
    return rot_z(roll) @ rot_y(yaw) @ rot_x(pitch)


# ---------------------------------------------------------------------------
# triangle meshes

@dataclass
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float64, world mm
    faces: np.ndarray     # (F, 3) int32, CCW as seen from the camera side
    normals: np.ndarray   # (V, 3) float64, unit per-vertex normals

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int32)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]


# ---------------------------------------------------------------------------
# deterministic RNG
#
# Thin wrapper over numpy's PCG64 so that (a) the same seed always yields
# the same stream across runs and platforms and (b) parallel work can fork
# children by pure seed derivation instead of sharing state.

@dataclass
class Rng:
    seed: int
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.seed = int(self.seed)
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(self.seed)))

    def uniform(self, lo: float, hi: float, size=None):
        return self._gen.uniform(lo, hi, size=size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self._gen.normal(loc, scale, size=size)

    def integers(self, lo: int, hi: int, size=None):
        return self._gen.integers(lo, hi, size=size)

    def choice(self, n: int, size: int, replace: bool = False):
        return self._gen.choice(n, size=size, replace=replace)

    def shuffle(self, x) -> None:
        self._gen.shuffle(x)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "Rng":
        """Derive an independent child stream; same (seed, key) -> same child."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        child._gen = np.random.Generator(np.random.PCG64(ss))
        return child
