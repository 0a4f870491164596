"""Software rasterizer: perspective camera/projector, Lambertian shading,
pattern projection.

Direct reflection only: a single directional light, no cast shadows, no
interreflection, no specular term.  Pixel centers sit at integer
coordinates (u = column, v = row, top-left origin); the depth buffer
stores camera-frame z, not ray length.  Depth and attributes are
interpolated perspective-correctly (linear in 1/z), so planar surfaces
reproduce the exact ray-plane intersection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import DepthMap, HifreqError, RigidTransform, TriangleMesh
from .synth import SceneSpec, height_map, height_map_to_mesh


class SizeMismatch(HifreqError):
    pass


class BadSpacing(HifreqError):
    pass


@dataclass
class PinholeDevice:
    """Perspective camera or projector. `pose` maps world -> device frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    pose: RigidTransform

    def validate(self) -> "PinholeDevice":
        if self.fx <= 0 or self.fy <= 0:
            raise HifreqError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise HifreqError("principal point outside the image")
        self.pose.validate()
        return self

    def project(self, pts: np.ndarray):
        """World points (..., 3) -> (u, v, z_device)."""
        d = self.pose.apply(pts)
        z = d[..., 2]
        u = self.fx * d[..., 0] / z + self.cx
        v = self.fy * d[..., 1] / z + self.cy
        return u, v, z

    def center_world(self) -> np.ndarray:
        return -self.pose.rotation.T @ self.pose.translation

    def forward_world(self) -> np.ndarray:
        """Optical axis (+z of the device) expressed in world coordinates."""
        return self.pose.rotation[2, :].copy()

    def ray_world(self, u, v):
        """Back-projected unit ray directions in world coordinates."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        d = np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy,
                      np.ones_like(u)], axis=-1)
        d = d @ self.pose.rotation  # == R.T applied to each row
        return d / np.linalg.norm(d, axis=-1, keepdims=True)

    @staticmethod
    def look_at(position, target, fx, fy, cx, cy, width, height) -> "PinholeDevice":
        """Device at `position` aiming its +z axis at `target`, y kept downward."""
        position = np.asarray(position, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - position
        z = z / np.linalg.norm(z)
        down = np.array([0.0, 1.0, 0.0])
        x = np.cross(down, z)
        nx = np.linalg.norm(x)
        if nx < 1e-12:
            raise HifreqError("look_at direction parallel to the image y axis")
        x /= nx
        y = np.cross(z, x)
        R = np.stack([x, y, z])
        return PinholeDevice(fx, fy, cx, cy, width, height,
                             RigidTransform(R, -R @ position))


@dataclass
class RasterBuffers:
    depth: DepthMap            # camera-frame z, mm
    normal: np.ndarray         # (H, W, 3), interpolated unit normals, 0 off-mask
    tri_index: np.ndarray      # (H, W) int32, -1 where no hit
    bary: np.ndarray           # (H, W, 3) perspective-correct weights

    def world_points(self, mesh: TriangleMesh) -> np.ndarray:
        """(H, W, 3) interpolated world positions (garbage off-mask)."""
        tri = np.maximum(self.tri_index, 0)
        corners = mesh.vertices[mesh.faces[tri]]  # (H, W, 3, 3)
        return np.einsum("hwk,hwkc->hwc", self.bary, corners)


@dataclass
class RenderOutput:
    shading: np.ndarray  # (H, W) in [0, 1]
    depth: DepthMap
    pattern: np.ndarray  # (H, W) in [0, 1]


_NEAR = 1e-6


@njit(cache=True)
def _raster_loop(u, v, z, faces, height, width, zbuf, tribuf, barybuf):
    for f in range(faces.shape[0]):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        z0, z1, z2 = z[i0], z[i1], z[i2]
        if z0 <= _NEAR or z1 <= _NEAR or z2 <= _NEAR:
            continue
        u0, v0 = u[i0], v[i0]
        u1, v1 = u[i1], v[i1]
        u2, v2 = u[i2], v[i2]
        area = (u1 - u0) * (v2 - v0) - (v1 - v0) * (u2 - u0)
        if area == 0.0:
            continue
        umin = min(u0, min(u1, u2))
        umax = max(u0, max(u1, u2))
        vmin = min(v0, min(v1, v2))
        vmax = max(v0, max(v1, v2))
        c0 = max(0, int(np.ceil(umin)))
        c1 = min(width - 1, int(np.floor(umax)))
        r0 = max(0, int(np.ceil(vmin)))
        r1 = min(height - 1, int(np.floor(vmax)))
        if c0 > c1 or r0 > r1:
            continue
        inv_area = 1.0 / area
        for r in range(r0, r1 + 1):
            py = float(r)
            for c in range(c0, c1 + 1):
                px = float(c)
                w0 = ((u2 - u1) * (py - v1) - (v2 - v1) * (px - u1)) * inv_area
                w1 = ((u0 - u2) * (py - v2) - (v0 - v2) * (px - u2)) * inv_area
                w2 = 1.0 - w0 - w1
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                denom = w0 / z0 + w1 / z1 + w2 / z2
                zp = 1.0 / denom
                if zp < zbuf[r, c]:
                    zbuf[r, c] = zp
                    tribuf[r, c] = f
                    barybuf[r, c, 0] = w0 / z0 * zp
                    barybuf[r, c, 1] = w1 / z1 * zp
                    barybuf[r, c, 2] = w2 / z2 * zp


def rasterize(mesh: TriangleMesh, cam: PinholeDevice) -> RasterBuffers:
    """Z-buffered perspective projection of a triangle mesh.

    Triangles with any vertex at or behind the device plane are skipped
    (scenes here sit well in front of the camera, so no partial clipping).
    A fully off-screen mesh yields an empty mask rather than an error.
    """
    cam.validate()
    H, W = cam.height, cam.width
    zbuf = np.full((H, W), np.inf, dtype=np.float64)
    tribuf = np.full((H, W), -1, dtype=np.int32)
    barybuf = np.zeros((H, W, 3), dtype=np.float64)
    if mesh.n_faces > 0:
        u, v, z = cam.project(mesh.vertices)
        _raster_loop(np.ascontiguousarray(u), np.ascontiguousarray(v),
                     np.ascontiguousarray(z), mesh.faces, H, W,
                     zbuf, tribuf, barybuf)
    hit = tribuf >= 0
    depth = np.where(hit, zbuf, 0.0)
    mask = hit.astype(np.float64)

    normal = np.zeros((H, W, 3), dtype=np.float64)
    if np.any(hit):
        tri = tribuf[hit]
        corner_n = mesh.normals[mesh.faces[tri]]           # (n, 3, 3)
        n = np.einsum("nk,nkc->nc", barybuf[hit], corner_n)
        n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-30)
        normal[hit] = n
    return RasterBuffers(DepthMap(depth, mask), normal, tribuf, barybuf)


def shade_lambertian(normal_buf: np.ndarray, light_dir: np.ndarray,
                     albedo: float) -> np.ndarray:
    """albedo * max(0, n . -light) per pixel; zero where the normal is zero."""
    light_dir = np.asarray(light_dir, dtype=np.float64)
    if abs(np.linalg.norm(light_dir) - 1.0) > 1e-9:
        raise HifreqError("light_dir must be unit length")
    if not (0.0 < albedo <= 1.0):
        raise HifreqError(f"albedo {albedo} outside (0, 1]")
    s = -(normal_buf @ light_dir)
    return albedo * np.maximum(s, 0.0)


def grid_pattern(proj_res: tuple, spacing: int, line_width: int = 1) -> np.ndarray:
    """Binary grid image: lines every `spacing` px, `line_width` px wide.

    A pixel (u, v) is lit iff u % spacing < line_width or v % spacing < line_width.
    """
    if line_width < 1 or spacing <= line_width:
        raise BadSpacing(f"need spacing > line_width >= 1, got {spacing}, {line_width}")
    w, h = int(proj_res[0]), int(proj_res[1])
    u = np.arange(w) % spacing < line_width
    v = np.arange(h) % spacing < line_width
    return (v[:, None] | u[None, :]).astype(np.float64)


def project_pattern(mesh: TriangleMesh, cam: PinholeDevice, proj: PinholeDevice,
                    pattern_img: np.ndarray, buffers: RasterBuffers | None = None,
                    albedo: float = 1.0) -> np.ndarray:
    """Camera image of `pattern_img` thrown onto the mesh by the projector.

    Each covered camera pixel looks up its surface point through the
    projector (bilinear sample) and is attenuated by the Lambertian factor
    against the projector's optical axis, treating the projector as a
    directional source.  Points outside the projector frustum or facing
    away get 0.  Occlusion between surface parts is not computed.
    """
    pattern_img = np.asarray(pattern_img, dtype=np.float64)
    if pattern_img.shape != (proj.height, proj.width):
        raise SizeMismatch(
            f"pattern {pattern_img.shape} != projector {(proj.height, proj.width)}")
    if buffers is None:
        buffers = rasterize(mesh, cam)
    H, W = cam.height, cam.width
    out = np.zeros((H, W), dtype=np.float64)
    hit = buffers.tri_index >= 0
    if not np.any(hit):
        return out
    X = buffers.world_points(mesh)[hit]
    u, v, z = proj.project(X)
    tol = 1e-9  # keep boundary pixels that land on the frustum edge exactly
    inside = ((z > _NEAR) & (u >= -tol) & (u <= proj.width - 1 + tol)
              & (v >= -tol) & (v <= proj.height - 1 + tol))

    c0 = np.clip(np.floor(u).astype(np.int64), 0, proj.width - 2)
    r0 = np.clip(np.floor(v).astype(np.int64), 0, proj.height - 2)
    fu = u - c0
    fv = v - r0
    p00 = pattern_img[r0, c0]
    p01 = pattern_img[r0, c0 + 1]
    p10 = pattern_img[r0 + 1, c0]
    p11 = pattern_img[r0 + 1, c0 + 1]
    sample = (p00 * (1 - fu) * (1 - fv) + p01 * fu * (1 - fv)
              + p10 * (1 - fu) * fv + p11 * fu * fv)

    toward_proj = -proj.forward_world()
    lam = np.maximum(buffers.normal[hit] @ toward_proj, 0.0)
    out[hit] = np.where(inside, sample * lam * albedo, 0.0)
    return out


@dataclass
class RenderConfig:
    """Height-map grid and mesh resolution used when rendering a scene."""

    hm_width: int = 561        # height-map grid columns
    hm_height: int = 561
    mesh_pitch: float = 0.5    # mm per height-map sample
    grid_spacing: int = 24     # projector pattern, px
    line_width: int = 2


def render_scene(spec: SceneSpec, cam: PinholeDevice, proj: PinholeDevice,
                 cfg: RenderConfig) -> RenderOutput:
    """Full calibrated render of one scene: shading, ground-truth depth, pattern."""
    spec.validate()
    h = height_map(spec.params, cfg.hm_width, cfg.hm_height, cfg.mesh_pitch)
    mesh = height_map_to_mesh(h, spec.pose, cfg.mesh_pitch)
    buffers = rasterize(mesh, cam)
    shading = shade_lambertian(buffers.normal, spec.light_dir, spec.albedo)
    shifted = shift_device(proj, spec.projector_shift)
    pattern_src = grid_pattern((proj.width, proj.height), cfg.grid_spacing, cfg.line_width)
    pattern = project_pattern(mesh, cam, shifted, pattern_src,
                              buffers=buffers, albedo=spec.albedo)
    return RenderOutput(shading, buffers.depth, pattern)


def shift_device(dev: PinholeDevice, shift_world: np.ndarray) -> PinholeDevice:
    """Same device translated by `shift_world` mm, orientation unchanged."""
    t = dev.pose.translation - dev.pose.rotation @ np.asarray(shift_world, dtype=np.float64)
    return PinholeDevice(dev.fx, dev.fy, dev.cx, dev.cy, dev.width, dev.height,
                         RigidTransform(dev.pose.rotation.copy(), t))
