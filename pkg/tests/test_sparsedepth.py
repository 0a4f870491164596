"""Sparse sampling, triangulation, and TPS interpolation oracles."""

import math

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from hifreq.core import DepthMap, RigidTransform, Rng
from hifreq.raster import PinholeDevice, grid_pattern
from hifreq.sparsedepth import (NoSamples, ParallelRays, RbfModel, SingularSystem,
                                SparseDepth, rbf_eval, rbf_fit, sample_sparse,
                                triangulate)
from hifreq.synth import SinusoidParams, SinusoidTerm, height_map


def make_plane_depth(n=64, base=600.0):
    return DepthMap(np.full((n, n), base), np.ones((n, n)))


class TestSampleSparse:
    def test_identity_sampling(self):
        d = make_plane_depth(16)
        s = sample_sparse(d, np.ones((16, 16)), stride=1, noise_sigma=0.0, rng=Rng(0))
        assert len(s) == 256
        assert np.array_equal(s.depths, np.full(256, 600.0))
        s.validate()

    def test_dark_pattern_raises(self):
        with pytest.raises(NoSamples):
            sample_sparse(make_plane_depth(8), np.zeros((8, 8)), 1, 0.0, Rng(0))

    def test_stride_picks_every_kth(self):
        d = make_plane_depth(8)
        s = sample_sparse(d, np.ones((8, 8)), stride=3, noise_sigma=0.0, rng=Rng(0))
        flat = s.vs * 8 + s.us
        assert np.array_equal(flat, np.arange(0, 64, 3))

    def test_noise_sigma_monte_carlo(self):
        d = make_plane_depth(128)  # 16384 pixels, stride 1
        s = sample_sparse(d, np.ones((128, 128)), 1, 1.0, Rng(3))
        resid = s.depths - 600.0
        assert 0.95 <= resid.std() <= 1.05

    def test_text_roundtrip(self):
        d = make_plane_depth(8)
        s = sample_sparse(d, np.ones((8, 8)), 5, 0.5, Rng(1))
        back = SparseDepth.from_text(s.to_text(), s.source_res)
        assert np.array_equal(back.us, s.us)
        assert np.allclose(back.depths, s.depths, atol=1e-7)


def stereo_pair():
    cam = PinholeDevice(600.0, 600.0, 119.5, 119.5, 240, 240, RigidTransform.identity())
    proj = PinholeDevice.look_at([150.0, 0.0, 0.0], [0.0, 0.0, 600.0],
                                 600.0, 600.0, 119.5, 119.5, 240, 240)
    return cam, proj


class TestTriangulate:
    def test_forward_projection_roundtrip(self):
        cam, proj = stereo_pair()
        X = np.array([0.0, 0.0, 600.0])
        cu, cv, _ = cam.project(X)
        pu, pv, _ = proj.project(X)
        got = triangulate(cam, proj, (cu, cv), (pu, pv))
        assert np.max(np.abs(got - X)) < 1e-6

    def test_random_points_roundtrip(self):
        cam, proj = stereo_pair()
        rng = Rng(8)
        for _ in range(25):
            X = np.array([rng.uniform(-80, 80), rng.uniform(-80, 80),
                          rng.uniform(450, 800)])
            cu, cv, _ = cam.project(X)
            pu, pv, _ = proj.project(X)
            if not (0 <= pu < 240 and 0 <= pv < 240):
                continue
            got = triangulate(cam, proj, (cu, cv), (pu, pv))
            assert np.max(np.abs(got - X)) < 1e-6

    def test_exact_intersection_is_midpoint(self):
        cam, proj = stereo_pair()
        X = np.array([10.0, -5.0, 620.0])
        cu, cv, _ = cam.project(X)
        pu, pv, _ = proj.project(X)
        got = triangulate(cam, proj, (cu, cv), (pu, pv))
        assert np.max(np.abs(got - X)) < 1e-6

    def test_identical_devices_raise(self):
        cam, _ = stereo_pair()
        with pytest.raises(ParallelRays):
            triangulate(cam, cam, (120.0, 120.0), (120.0, 120.0))


class TestRbf:
    def test_constant_reproduction(self):
        rng = Rng(2)
        us = rng.integers(0, 64, 40)
        vs = rng.integers(0, 64, 40)
        flat = np.unique(vs * 64 + us)
        s = SparseDepth(flat % 64, flat // 64, np.full(flat.size, 600.0), (64, 64))
        model = rbf_fit(s, smoothing=0.0)
        d = rbf_eval(model, np.ones((64, 64)))
        assert np.max(np.abs(d.depth - 600.0)) < 1e-6

    def test_affine_exactness(self):
        rng = Rng(4)
        us = rng.integers(0, 100, 60).astype(float)
        vs = rng.integers(0, 100, 60).astype(float)
        keep = np.unique(vs.astype(int) * 100 + us.astype(int))
        us, vs = (keep % 100).astype(float), (keep // 100).astype(float)
        d = 600.0 + 0.1 * us - 0.05 * vs
        s = SparseDepth(us.astype(int), vs.astype(int), d, (100, 100))
        model = rbf_fit(s, smoothing=0.0)
        qu = np.array([13.7, 55.1, 88.8])
        qv = np.array([2.2, 47.0, 91.3])
        got = model.eval_at(qu, qv)
        want = 600.0 + 0.1 * qu - 0.05 * qv
        assert np.max(np.abs(got - want)) < 1e-6

    def test_interpolation_at_centers(self):
        rng = Rng(6)
        n = 50
        us = rng.integers(0, 200, n)
        vs = rng.integers(0, 200, n)
        flat = np.unique(vs * 200 + us)
        us, vs = flat % 200, flat // 200
        d = 600.0 + rng.normal(0, 2.0, us.size)
        s = SparseDepth(us, vs, d, (200, 200))
        model = rbf_fit(s, smoothing=0.0)
        got = model.eval_at(us.astype(float), vs.astype(float))
        assert np.max(np.abs(got - d)) < 1e-6
        model.validate()

    def test_collinear_singular(self):
        us = np.arange(10)
        s = SparseDepth(us, us, np.full(10, 600.0), (16, 16))
        with pytest.raises(SingularSystem):
            rbf_fit(s, smoothing=0.0)

    def test_too_few_samples(self):
        s = SparseDepth(np.array([1, 2]), np.array([1, 2]),
                        np.array([600.0, 601.0]), (8, 8))
        with pytest.raises(SingularSystem):
            rbf_fit(s, smoothing=0.0)

    def test_subsampling_respects_max_centers(self):
        rng = Rng(9)
        us, vs = np.meshgrid(np.arange(40), np.arange(40))
        us, vs = us.ravel(), vs.ravel()
        d = 600.0 + 0.01 * us
        s = SparseDepth(us, vs, d, (40, 40))
        model = rbf_fit(s, smoothing=1e-3, max_centers=200, rng=rng)
        assert model.centers.shape[0] == 200

    def test_side_conditions(self):
        rng = Rng(13)
        us = rng.integers(0, 64, 30)
        vs = rng.integers(0, 64, 30)
        flat = np.unique(vs * 64 + us)
        us, vs = flat % 64, flat // 64
        s = SparseDepth(us, vs, 600 + rng.normal(0, 1, us.size), (64, 64))
        rbf_fit(s, smoothing=1e-3).validate()

    def test_eval_is_continuous(self):
        # adjacent-pixel jumps bounded: TPS is C1, so steps shrink with pitch
        rng = Rng(21)
        us = rng.integers(0, 96, 80)
        vs = rng.integers(0, 96, 80)
        flat = np.unique(vs * 96 + us)
        us, vs = flat % 96, flat // 96
        s = SparseDepth(us, vs, 600 + rng.normal(0, 1.5, us.size), (96, 96))
        d = rbf_eval(rbf_fit(s, smoothing=1e-3), np.ones((96, 96))).depth
        jumps = max(np.abs(np.diff(d, axis=0)).max(), np.abs(np.diff(d, axis=1)).max())
        # slope bound: |grad| peaks near centers; 1 px steps stay small
        assert jumps < 2.0


class TestInformationLoss:
    def test_highfreq_wave_lost_between_grid_lines(self):
        """Grid-sampled high-frequency wave: the TPS output tracks a low-pass
        of the truth while the full-band residual keeps the wave amplitude."""
        alpha, freq = 1.5, 0.3  # cycles/mm at 1 mm/px
        n = 120
        params = SinusoidParams([SinusoidTerm(alpha, freq, 0.4, 0.3)])
        gt = 600.0 + height_map(params, n, n, 1.0)
        dm = DepthMap(gt, np.ones((n, n)))
        pattern = grid_pattern((n, n), spacing=24, line_width=1)
        s = sample_sparse(dm, pattern, stride=4, noise_sigma=0.0, rng=Rng(0))
        model = rbf_fit(s, smoothing=1e-3, max_centers=2000, rng=Rng(1))
        low = rbf_eval(model, np.ones((n, n))).depth

        rmse_gt = float(np.sqrt(np.mean((low - gt) ** 2)))
        assert rmse_gt >= 0.5 * alpha

        smooth = 600.0 + gaussian_filter(gt - 600.0, sigma=12.0)
        rmse_smooth = float(np.sqrt(np.mean((low - smooth) ** 2)))
        assert rmse_smooth < rmse_gt
