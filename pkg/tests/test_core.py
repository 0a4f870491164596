import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hifreq.core import (DepthMap, HifreqError, NonFinite, RigidTransform, Rng,
                         ZeroDim, assert_finite, euler_rotation, rot_z,
                         tensor_new, transform_point)


class TestTensorNew:
    def test_zero_fill(self):
        t = tensor_new([2, 2], 0.0)
        assert t.shape == (2, 2)
        assert np.all(t == 0.0)

    def test_singleton(self):
        assert tensor_new([1], 3.5)[0] == 3.5

    def test_zero_dim_rejected(self):
        with pytest.raises(ZeroDim):
            tensor_new([3, 0], 1.0)

    def test_row_major(self):
        assert tensor_new([4, 5]).flags["C_CONTIGUOUS"]

    @given(st.lists(st.integers(1, 6), min_size=1, max_size=4), st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_index_roundtrip(self, shape, seed):
        t = tensor_new(shape, 0.0)
        rng = np.random.default_rng(seed)
        idx = tuple(int(rng.integers(0, d)) for d in shape)
        v = float(rng.normal())
        t[idx] = v
        assert t[idx] == v

    def test_assert_finite(self):
        assert_finite(np.ones(3))
        with pytest.raises(NonFinite):
            assert_finite(np.array([1.0, np.nan]))


class TestRigidTransform:
    def test_identity(self):
        t = RigidTransform.identity()
        p = np.array([1.0, 2.0, 3.0])
        assert np.allclose(transform_point(t, p), p)

    def test_pure_translation(self):
        t = RigidTransform(np.eye(3), [0, 0, 5])
        assert np.allclose(transform_point(t, np.zeros(3)), [0, 0, 5])

    def test_rot90_about_z(self):
        # oracle: direct matrix multiply with the closed-form 90 degree matrix
        R = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        t = RigidTransform(rot_z(np.pi / 2), np.zeros(3))
        expected = R @ np.array([1.0, 0.0, 0.0])
        got = transform_point(t, [1.0, 0.0, 0.0])
        assert np.max(np.abs(got - expected)) < 1e-12
        assert np.max(np.abs(got - np.array([0.0, 1.0, 0.0]))) < 1e-12

    def test_validate_rejects_nonorthonormal(self):
        with pytest.raises(HifreqError):
            RigidTransform(np.eye(3) * 1.1, np.zeros(3)).validate()

    def test_compose_associative_and_inverse(self):
        rng = Rng(5)
        ts = []
        for k in range(3):
            R = euler_rotation(*rng.uniform(-1.0, 1.0, 3))
            ts.append(RigidTransform(R, rng.uniform(-50, 50, 3)).validate())
        a, b, c = ts
        p = rng.uniform(-100, 100, (20, 3))
        left = a.compose(b).compose(c).apply(p)
        right = a.compose(b.compose(c)).apply(p)
        assert np.max(np.abs(left - right)) < 1e-9
        for t in ts:
            round_trip = t.inverse().apply(t.apply(p))
            assert np.max(np.abs(round_trip - p)) < 1e-9

    def test_batched_points(self):
        t = RigidTransform(rot_z(0.3), [1, 2, 3]).validate()
        pts = np.arange(12.0).reshape(4, 3)
        batch = t.apply(pts)
        for i in range(4):
            assert np.allclose(batch[i], t.apply(pts[i]))


class TestRng:
    def test_equal_seed_equal_stream(self):
        a = Rng(123).uniform(0, 1, 10_000)
        b = Rng(123).uniform(0, 1, 10_000)
        assert np.array_equal(a, b)

    def test_different_seed_differs(self):
        assert not np.array_equal(Rng(1).uniform(0, 1, 100), Rng(2).uniform(0, 1, 100))

    def test_spawn_deterministic_and_independent(self):
        r = Rng(9)
        a = r.spawn(3).normal(size=50)
        b = Rng(9).spawn(3).normal(size=50)
        c = Rng(9).spawn(4).normal(size=50)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)


class TestDepthMap:
    def test_mask_and_shape_checks(self):
        d = DepthMap(np.full((4, 4), 600.0), np.ones((4, 4)))
        d.validate()
        assert d.width == 4 and d.height == 4

    def test_nan_under_mask_rejected(self):
        depth = np.full((3, 3), 600.0)
        depth[1, 1] = np.nan
        with pytest.raises(NonFinite):
            DepthMap(depth, np.ones((3, 3))).validate()

    def test_nan_outside_mask_ignored(self):
        depth = np.full((3, 3), 600.0)
        depth[1, 1] = np.nan
        mask = np.ones((3, 3))
        mask[1, 1] = 0.0
        DepthMap(depth, mask).validate()

    def test_bad_mask_values(self):
        with pytest.raises(HifreqError):
            DepthMap(np.ones((2, 2)), np.full((2, 2), 0.5)).validate()
