"""Wave-sum surface generation.

The scalar oracle used throughout re-evaluates the wave sum term by term
at a single physical point, independent of the gridded implementation:

    H(x, y) = sum_i alpha_i * cos(2*pi * (x cos th_i + y sin th_i) * f_i + psi_i)
"""

import math

import numpy as np
import pytest

from hifreq.core import Rng
from hifreq.synth import (BadParams, DegenerateGrid, EmptyRange, ScenePose,
                          SceneSpec, SinusoidParams, SinusoidTerm, SynthConfig,
                          height_gradient, height_map, height_map_to_mesh,
                          sample_scene)


def scalar_wave(terms, x, y):
    total = 0.0
    for t in terms:
        xp = x * math.cos(t.theta) + y * math.sin(t.theta)
        total += t.alpha * math.cos(2 * math.pi * xp * t.freq + t.psi)
    return total


def random_params(rng: Rng, n=2) -> SinusoidParams:
    return SinusoidParams([
        SinusoidTerm(alpha=float(rng.uniform(0.3, 2.5)),
                     freq=float(rng.uniform(0.05, 0.4)),
                     psi=float(rng.uniform(0, 2 * math.pi)),
                     theta=float(rng.uniform(0, math.pi)))
        for _ in range(n)])


class TestHeightMap:
    def test_zero_amplitude(self):
        p = SinusoidParams([SinusoidTerm(0.0, 0.2, 1.0, 0.5)])
        assert np.all(height_map(p, 8, 6, 0.5) == 0.0)

    def test_phase_zero_center(self):
        # odd grid puts a sample exactly at the physical origin
        p = SinusoidParams([SinusoidTerm(1.0, 0.37, 0.0, 0.0)])
        h = height_map(p, 9, 7, 0.5)
        assert h[3, 4] == pytest.approx(1.0, abs=1e-15)

    def test_matches_scalar_oracle(self):
        params = random_params(Rng(7))
        # pitch 0.1 grid: (x, y) = (3.2, -1.5) mm falls on column 72, row 15
        h = height_map(params, 81, 61, 0.1)
        want = scalar_wave(params.terms, 3.2, -1.5)
        assert abs(h[15, 72] - want) < 1e-12

    def test_linear_in_alpha(self):
        rng = Rng(3)
        params = random_params(rng)
        scaled = SinusoidParams([SinusoidTerm(2.5 * t.alpha, t.freq, t.psi, t.theta)
                                 for t in params.terms])
        h1 = height_map(params, 16, 16, 0.7)
        h2 = height_map(scaled, 16, 16, 0.7)
        assert np.allclose(h2, 2.5 * h1, atol=1e-12)

    def test_cosine_parity(self):
        # theta += pi with psi -> -psi leaves every value unchanged
        params = random_params(Rng(11))
        flipped = SinusoidParams([SinusoidTerm(t.alpha, t.freq, -t.psi, t.theta + math.pi)
                                  for t in params.terms])
        a = height_map(params, 20, 14, 0.3)
        b = height_map(flipped, 20, 14, 0.3)
        assert np.max(np.abs(a - b)) < 1e-12

    def test_direction_equivariance(self):
        # rotating the grid by phi while subtracting phi from every theta
        # reproduces the original surface at the rotated physical points
        rng = Rng(23)
        params = random_params(rng)
        phi = 0.83
        rotated = SinusoidParams([SinusoidTerm(t.alpha, t.freq, t.psi, t.theta - phi)
                                  for t in params.terms])
        h = height_map(rotated, 15, 15, 0.4)
        for r, c in [(0, 0), (7, 7), (3, 11), (14, 2)]:
            x = (c - 7) * 0.4
            y = (r - 7) * 0.4
            xr = x * math.cos(phi) - y * math.sin(phi)
            yr = x * math.sin(phi) + y * math.cos(phi)
            assert abs(h[r, c] - scalar_wave(params.terms, xr, yr)) < 1e-12

    def test_gradient_matches_finite_difference(self):
        params = random_params(Rng(4))
        eps = 1e-6
        for x, y in [(0.3, -2.0), (5.1, 4.4)]:
            gx, gy = height_gradient(params, x, y)
            fx = (scalar_wave(params.terms, x + eps, y)
                  - scalar_wave(params.terms, x - eps, y)) / (2 * eps)
            fy = (scalar_wave(params.terms, x, y + eps)
                  - scalar_wave(params.terms, x, y - eps)) / (2 * eps)
            assert abs(gx - fx) < 1e-6 and abs(gy - fy) < 1e-6

    def test_bad_lambda_rejected(self):
        with pytest.raises(BadParams):
            height_map(SinusoidParams([SinusoidTerm(1.0, 0.0, 0.0, 0.0)]), 4, 4, 1.0)

    def test_degenerate_grid(self):
        p = SinusoidParams([SinusoidTerm(1.0, 0.1, 0.0, 0.0)])
        with pytest.raises(DegenerateGrid):
            height_map(p, 1, 8, 1.0)


class TestSampleScene:
    def test_point_ranges_fully_determined(self):
        cfg = SynthConfig(n_terms=1, alpha_range=(1.0, 1.0), freq_range=(0.2, 0.2),
                          psi_range=(0.3, 0.3), theta_range=(0.4, 0.4),
                          pitch_limit=0.0, yaw_limit=0.0, roll_limit=0.0,
                          albedo_range=(0.8, 0.8), light_azimuth_range=(0.1, 0.1),
                          projector_shift_limit=(0.0, 0.0, 0.0))
        s = sample_scene(Rng(0), cfg)
        t = s.params.terms[0]
        assert (t.alpha, t.freq, t.psi, t.theta) == (1.0, 0.2, 0.3, 0.4)
        assert s.pose.pitch == 0.0 and s.pose.roll == 0.0
        assert s.albedo == 0.8
        assert np.allclose(s.projector_shift, 0.0)

    def test_same_seed_same_scene(self):
        cfg = SynthConfig()
        a = sample_scene(Rng(42), cfg)
        b = sample_scene(Rng(42), cfg)
        assert repr(a.params) == repr(b.params)
        assert a.pose == b.pose
        assert np.array_equal(a.light_dir, b.light_dir)

    def test_pitch_monte_carlo_bounds(self):
        cfg = SynthConfig()
        limit = cfg.pitch_limit
        draws = np.array([sample_scene(Rng(0).spawn(i), cfg).pose.pitch
                          for i in range(10_000)])
        assert draws.min() >= -limit and draws.max() <= limit
        assert abs(np.degrees(draws.mean())) < 0.5

    def test_outputs_satisfy_invariants(self):
        cfg = SynthConfig(light_azimuth_range=(-math.pi / 4, math.pi / 4))
        for i in range(50):
            s = sample_scene(Rng(1).spawn(i), cfg).validate()
            assert abs(s.pose.yaw) <= cfg.yaw_limit
            assert abs(s.pose.roll) <= math.pi
            az = math.atan2(s.light_dir[1], s.light_dir[0])
            assert -math.pi / 4 - 1e-12 <= az <= math.pi / 4 + 1e-12

    def test_empty_range_rejected(self):
        with pytest.raises(EmptyRange):
            sample_scene(Rng(0), SynthConfig(alpha_range=(2.0, 1.0)))


class TestHeightMapToMesh:
    def test_flat_plane(self):
        pose = ScenePose(base_depth=600.0)
        mesh = height_map_to_mesh(np.zeros((2, 2)), pose, 1.0)
        assert mesh.n_faces == 2
        assert np.allclose(mesh.normals, [0.0, 0.0, -1.0])
        assert np.allclose(mesh.vertices[:, 2], 600.0)

    def test_counts(self):
        mesh = height_map_to_mesh(np.zeros((3, 3)), ScenePose(600.0), 1.0)
        assert mesh.vertices.shape == (9, 3)
        assert mesh.n_faces == 8

    def test_vertex_normals_match_analytic(self):
        # single wave at fine pitch: mesh normals vs the exact gradient
        params = SinusoidParams([SinusoidTerm(1.2, 0.12, 0.7, 0.4)])
        pitch = 0.25
        n = 81
        h = height_map(params, n, n, pitch)
        mesh = height_map_to_mesh(h, ScenePose(600.0), pitch)
        xs = (np.arange(n) - (n - 1) / 2.0) * pitch
        worst = 0.0
        for r in range(10, n - 10, 7):
            for c in range(10, n - 10, 7):
                gx, gy = height_gradient(params, xs[c], xs[r])
                ana = np.array([gx, gy, -1.0])
                ana /= np.linalg.norm(ana)
                got = mesh.normals[r * n + c]
                angle = math.acos(np.clip(got @ ana, -1, 1))
                worst = max(worst, angle)
        assert worst < 0.02

    def test_pose_rotates_about_plane_center(self):
        pose = ScenePose(base_depth=500.0, pitch=0.2, yaw=-0.1, roll=1.0)
        h = np.zeros((5, 5))
        mesh = height_map_to_mesh(h, pose, 2.0)
        # the center vertex is fixed by the rotation
        assert np.allclose(mesh.vertices[12], [0.0, 0.0, 500.0], atol=1e-12)

    def test_too_small(self):
        with pytest.raises(DegenerateGrid):
            height_map_to_mesh(np.zeros((1, 4)), ScenePose(600.0), 1.0)
