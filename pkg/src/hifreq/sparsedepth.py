"""Simulated one-shot structured-light measurement.

Sparse depth is sampled from rendered ground truth along the projected
grid lines (standing in for real grid-code decoding), optionally
perturbed with Gaussian noise, then densified into a low-frequency depth
map by thin-plate-spline RBF interpolation with an affine term.
A two-ray triangulation utility covers the calibrated-pair geometry.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .core import DepthMap, HifreqError, Rng
from .raster import PinholeDevice


class NoSamples(HifreqError):
    pass


class ParallelRays(HifreqError):
    pass


class SingularSystem(HifreqError):
    pass


@dataclass
class SparseDepth:
    us: np.ndarray      # (n,) int, camera column
    vs: np.ndarray      # (n,) int, camera row
    depths: np.ndarray  # (n,) float, mm
    source_res: tuple   # (W, H)

    def __post_init__(self):
        self.us = np.asarray(self.us, dtype=np.int64)
        self.vs = np.asarray(self.vs, dtype=np.int64)
        self.depths = np.asarray(self.depths, dtype=np.float64)

    def __len__(self) -> int:
        return self.depths.shape[0]

    def validate(self) -> "SparseDepth":
        w, h = self.source_res
        if np.any((self.us < 0) | (self.us >= w) | (self.vs < 0) | (self.vs >= h)):
            raise HifreqError("sample pixel outside source resolution")
        if np.any(self.depths <= 0):
            raise HifreqError("depths must be positive")
        flat = self.vs * w + self.us
        if np.unique(flat).size != flat.size:
            raise HifreqError("duplicate (u, v) sample")
        return self

    def to_text(self) -> str:
        buf = io.StringIO()
        for u, v, d in zip(self.us, self.vs, self.depths):
            buf.write(f"{u} {v} {d:.9g}\n")
        return buf.getvalue()

    @staticmethod
    def from_text(text: str, source_res: tuple) -> "SparseDepth":
        rows = [line.split() for line in text.splitlines() if line.strip()]
        us = [int(r[0]) for r in rows]
        vs = [int(r[1]) for r in rows]
        ds = [float(r[2]) for r in rows]
        return SparseDepth(np.array(us), np.array(vs), np.array(ds), source_res)


def sample_sparse(depth_gt: DepthMap, pattern_cam: np.ndarray, stride: int,
                  noise_sigma: float, rng: Rng) -> SparseDepth:
    """Every `stride`-th valid pixel under the lit pattern, with depth noise.

    Eligible pixels (mask == 1 and pattern > 0.5) are walked in row-major
    order and every stride-th one is kept.
    """
    pattern_cam = np.asarray(pattern_cam)
    if pattern_cam.shape != depth_gt.depth.shape:
        raise HifreqError("pattern image and depth map sizes differ")
    if stride < 1:
        raise HifreqError("stride must be >= 1")
    eligible = depth_gt.valid & (pattern_cam > 0.5)
    vs, us = np.nonzero(eligible)
    if us.size == 0:
        raise NoSamples("no lit valid pixels to sample")
    us = us[::stride]
    vs = vs[::stride]
    d = depth_gt.depth[vs, us] + rng.normal(0.0, noise_sigma, size=us.size)
    return SparseDepth(us, vs, d, (depth_gt.width, depth_gt.height))


def triangulate(cam: PinholeDevice, proj: PinholeDevice,
                cam_px: tuple, proj_px: tuple) -> np.ndarray:
    """Midpoint of the common perpendicular of the two back-projected rays."""
    o1 = cam.center_world()
    o2 = proj.center_world()
    d1 = cam.ray_world(cam_px[0], cam_px[1])
    d2 = proj.ray_world(proj_px[0], proj_px[1])
    b = float(d1 @ d2)
    denom = 1.0 - b * b  # |d1 x d2|^2 for unit rays
    if denom < 1e-12:
        raise ParallelRays("back-projected rays are parallel")
    w0 = o1 - o2
    d = float(d1 @ w0)
    e = float(d2 @ w0)
    s = (b * e - d) / denom
    t = (e - b * d) / denom
    p1 = o1 + s * d1
    p2 = o2 + t * d2
    return 0.5 * (p1 + p2)


@dataclass
class RbfModel:
    """Thin-plate spline r^2 log r over pixel coordinates plus a plane term."""

    centers: np.ndarray  # (n, 2) float64, (u, v)
    weights: np.ndarray  # (n,)
    affine: np.ndarray   # (3,): value = affine[0] + affine[1]*u + affine[2]*v + sum w phi
    smoothing: float

    def validate(self, tol: float = 1e-6) -> "RbfModel":
        if self.weights.shape[0] != self.centers.shape[0]:
            raise HifreqError("weights / centers length mismatch")
        w = self.weights
        side = np.array([w.sum(), (w * self.centers[:, 0]).sum(),
                         (w * self.centers[:, 1]).sum()])
        scale = max(1.0, float(np.abs(w).sum()))
        if np.max(np.abs(side)) > tol * scale:
            raise HifreqError("orthogonality side conditions violated")
        return self

    def eval_at(self, us: np.ndarray, vs: np.ndarray) -> np.ndarray:
        us = np.asarray(us, dtype=np.float64)
        vs = np.asarray(vs, dtype=np.float64)
        out = self.affine[0] + self.affine[1] * us + self.affine[2] * vs
        chunk = max(1, 2 ** 22 // max(1, len(self.weights)))
        for lo in range(0, us.size, chunk):
            hi = min(lo + chunk, us.size)
            r2 = ((us[lo:hi, None] - self.centers[None, :, 0]) ** 2
                  + (vs[lo:hi, None] - self.centers[None, :, 1]) ** 2)
            out[lo:hi] += _tps_kernel(r2) @ self.weights
        return out


def _tps_kernel(r2: np.ndarray) -> np.ndarray:
    """phi(r) = r^2 log r, written as r^2 log(r^2) / 2; phi(0) = 0."""
    with np.errstate(divide="ignore", invalid="ignore"):
        k = 0.5 * r2 * np.log(r2)
    return np.where(r2 > 0.0, k, 0.0)


def rbf_fit(s: SparseDepth, smoothing: float = 1e-3, max_centers: int = 2000,
            rng: Rng | None = None) -> RbfModel:
    """Solve the bordered TPS system with Tikhonov smoothing on the kernel block.

    With more samples than `max_centers` a uniform random subset is used as
    centers (and as fit data).  smoothing = 0 gives exact interpolation.
    """
    n = len(s)
    if n < 3:
        raise SingularSystem(f"need at least 3 samples, got {n}")
    us = s.us.astype(np.float64)
    vs = s.vs.astype(np.float64)
    d = s.depths
    if n > max_centers:
        if rng is None:
            raise HifreqError("rng required to subsample centers")
        keep = np.sort(rng.choice(n, size=max_centers, replace=False))
        us, vs, d = us[keep], vs[keep], d[keep]
        n = max_centers

    centers = np.stack([us, vs], axis=1)
    r2 = ((us[:, None] - us[None, :]) ** 2 + (vs[:, None] - vs[None, :]) ** 2)
    K = _tps_kernel(r2) + smoothing * np.eye(n)
    P = np.stack([np.ones(n), us, vs], axis=1)
    A = np.zeros((n + 3, n + 3), dtype=np.float64)
    A[:n, :n] = K
    A[:n, n:] = P
    A[n:, :n] = P.T
    rhs = np.concatenate([d, np.zeros(3)])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as err:
        raise SingularSystem(f"TPS system singular: {err}") from None
    if not np.all(np.isfinite(sol)):
        raise SingularSystem("TPS solve produced non-finite coefficients")
    resid = np.linalg.norm(A @ sol - rhs)
    if resid > 1e-6 * max(1.0, np.linalg.norm(rhs)):
        raise SingularSystem("TPS solve inaccurate (degenerate sample geometry)")
    return RbfModel(centers, sol[:n], sol[n:], smoothing)


def rbf_eval(model: RbfModel, roi: np.ndarray) -> DepthMap:
    """Dense low-frequency depth over the roi mask; mask is copied from roi."""
    roi = np.asarray(roi)
    mask = (roi > 0.5).astype(np.float64)
    vs, us = np.nonzero(mask)
    depth = np.zeros(mask.shape, dtype=np.float64)
    if us.size:
        depth[vs, us] = model.eval_at(us.astype(np.float64), vs.astype(np.float64))
    return DepthMap(depth, mask)
