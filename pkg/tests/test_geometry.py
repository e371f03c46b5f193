import math

import numpy as np
import pytest

from canopynbv.geometry import (CameraPose, RoiBounds, footprint_and_spacing,
                                image_plane_grid, look_at_frames, midplane_grid,
                                pinhole_ray_directions, ray_box_interval,
                                traverse_voxels)

from helpers import crossing_voxels, dense_sample_voxels


class TestRoiBounds:
    def test_dims_and_total(self):
        b = RoiBounds(np.zeros(3), np.array([1.6, 1.6, 2.0]), 0.04)
        assert b.dims == (40, 40, 50)
        assert b.n_total == 80000

    def test_key_center_roundtrip(self, small_bounds):
        key = small_bounds.key_for_point([0.55, 0.21, 0.99])
        assert key == (5, 2, 9)
        c = small_bounds.center_of_key(key)
        assert small_bounds.key_for_point(c) == key

    def test_invalid_bounds_rejected(self):
        with pytest.raises(ValueError):
            RoiBounds(np.zeros(3), np.zeros(3), 0.1)
        with pytest.raises(ValueError):
            RoiBounds(np.zeros(3), np.ones(3), -1.0)


class TestRayBoxInterval:
    def test_through_center(self, small_bounds):
        t0, t1 = ray_box_interval([-1, 0.5, 0.5], [1, 0, 0], small_bounds)
        assert t0 == pytest.approx(1.0) and t1 == pytest.approx(2.0)

    def test_miss(self, small_bounds):
        t0, t1 = ray_box_interval([-1, 5.0, 0.5], [1, 0, 0], small_bounds)
        assert t0 > t1


class TestTraversal:
    def test_axis_ray_visits_every_column_voxel(self, small_bounds):
        keys, entries, exited = traverse_voxels([0.05, 0.55, 0.55], [1, 0, 0],
                                                2.0, small_bounds)
        assert [tuple(k) for k in keys] == [(i, 5, 5) for i in range(10)]
        assert exited
        assert entries[0] == 0.0

    def test_segment_ends_inside(self, small_bounds):
        keys, _, exited = traverse_voxels([0.05, 0.55, 0.55], [1, 0, 0],
                                          0.3, small_bounds)
        assert [tuple(k) for k in keys] == [(0, 5, 5), (1, 5, 5), (2, 5, 5), (3, 5, 5)]
        assert not exited

    def test_ray_outside_pointing_away(self, small_bounds):
        keys, _, exited = traverse_voxels([-0.5, 0.5, 0.5], [-1, 0, 0],
                                          5.0, small_bounds)
        assert keys.shape[0] == 0 and exited

    def test_matches_interval_midpoint_oracle(self, cube50_bounds):
        rng = np.random.default_rng(11)
        for _ in range(300):
            o = rng.uniform(-0.5, 2.5, 3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            t_end = rng.uniform(0.05, 3.0)
            keys, _, _ = traverse_voxels(o, d, t_end, cube50_bounds)
            got = [tuple(k) for k in keys]
            assert got == crossing_voxels(o, d, t_end, cube50_bounds)

    def test_no_duplicates_and_sampler_subset(self, cube50_bounds):
        rng = np.random.default_rng(12)
        step = cube50_bounds.resolution / 10
        for _ in range(100):
            o = rng.uniform(-0.5, 2.5, 3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            t_end = rng.uniform(0.05, 3.0)
            keys, _, _ = traverse_voxels(o, d, t_end, cube50_bounds)
            got = [tuple(k) for k in keys]
            assert len(got) == len(set(got))
            assert dense_sample_voxels(o, d, t_end, cube50_bounds, step) <= set(got)


class TestCameraPose:
    def test_frame_orthonormal(self):
        pose = CameraPose([0, 0, 0], [0.2, 0.7, -0.1])
        for v in (pose.forward, pose.up, pose.right):
            assert np.linalg.norm(v) == pytest.approx(1.0)
        assert pose.forward @ pose.up == pytest.approx(0.0, abs=1e-12)
        assert pose.forward @ pose.right == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(np.cross(pose.forward, pose.up), pose.right)

    def test_vertical_forward_fallback(self):
        pose = CameraPose([0, 0, 0], [0, 0, 1.0])
        assert np.isfinite(pose.up).all()
        assert np.linalg.norm(pose.right) == pytest.approx(1.0)

    def test_zero_forward_rejected(self):
        with pytest.raises(ValueError):
            CameraPose([0, 0, 0], [0, 0, 0])

    def test_look_at_frames_matches_scalar(self):
        rng = np.random.default_rng(3)
        positions = rng.uniform(-1, 1, (20, 3))
        target = np.array([5.0, 5.0, 5.0])
        batch = look_at_frames(positions, np.broadcast_to(target, (20, 3)))
        for i, pose in enumerate(batch):
            ref = CameraPose.look_at(positions[i], target)
            assert np.allclose(pose.forward, ref.forward)
            assert np.allclose(pose.up, ref.up)
            assert np.allclose(pose.right, ref.right)


class TestRayGrid:
    def test_row_major_shape_and_normalization(self):
        pose = CameraPose([0, 0, 0], [0, 1, 0])
        dirs = pinhole_ray_directions(pose, math.radians(60), math.radians(40), 3, 5)
        assert dirs.shape == (15, 3)
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0)
        # corner rays hit the tangent extremes
        corner = dirs[0]
        tan_u = (corner @ pose.right) / (corner @ pose.forward)
        tan_v = (corner @ pose.up) / (corner @ pose.forward)
        assert tan_u == pytest.approx(-math.tan(math.radians(30)))
        assert tan_v == pytest.approx(-math.tan(math.radians(20)))

    def test_local_grid_spans_fov(self):
        local = image_plane_grid(math.radians(90), math.radians(90), 2, 2)
        assert np.allclose(np.abs(local[:, :2]), 1.0)


class TestMidplaneGrid:
    def test_footprint_formula(self):
        w, h, du, dv = footprint_and_spacing(0.9, math.radians(60), math.radians(60), 0.2)
        assert w == pytest.approx(2 * 0.9 * math.tan(math.radians(30)), abs=1e-12)
        assert h == pytest.approx(w, abs=1e-12)
        assert du == pytest.approx(0.8 * w, abs=1e-12)

    def test_zero_overlap_abuts(self):
        w, h, du, dv = footprint_and_spacing(0.5, math.radians(50), math.radians(35), 0.0)
        assert du == pytest.approx(w) and dv == pytest.approx(h)

    def test_example_tiling_three_by_two(self):
        # projected midplane 2.0 m x 1.6 m with spacing ~0.8314 -> 3 x 2 poses
        b = RoiBounds(np.array([0, 0, 0.0]), np.array([2.0, 1.0, 1.6]), 0.04)
        grid = midplane_grid(b, [0, 1, 0], 0.9, math.radians(60), math.radians(60), 0.2)
        assert grid.shape == (2, 3)
        assert grid.positions.shape[0] == 6
        xs = grid.positions[:, 0]
        # boustrophedon: second row reverses the sweep of the first
        assert np.allclose(xs[3:], xs[:3][::-1])
        assert np.all(np.diff(xs[:3]) > 0)
        zs = grid.positions[:, 2]
        assert np.all(zs[3:] > zs[:3])
        assert np.allclose(grid.positions[:, 1], 0.5 - 0.9)

    def test_full_coverage_random_configs(self):
        rng = np.random.default_rng(99)
        for _ in range(25):
            fov_h = rng.uniform(0.4, 1.6)
            fov_v = rng.uniform(0.4, 1.6)
            rho = rng.uniform(0.0, 0.95)
            ext = rng.uniform(0.4, 3.0, size=3)
            b = RoiBounds(np.zeros(3), ext, 0.05)
            d = rng.uniform(0.2, 1.2)
            grid = midplane_grid(b, [0, 1, 0], d, fov_h, fov_v, rho)
            w, h = grid.footprint
            # sample points across the projected midplane rectangle
            us = np.linspace(-ext[0] / 2, ext[0] / 2, 17)
            vs = np.linspace(-ext[2] / 2, ext[2] / 2, 17)
            cu = (grid.centers - b.center) @ grid.u_axis
            cv = (grid.centers - b.center) @ grid.v_axis
            for u in us:
                for v in vs:
                    inside = (np.abs(cu - u) <= w / 2 + 1e-9) & \
                             (np.abs(cv - v) <= h / 2 + 1e-9)
                    assert inside.any()

    def test_invalid_overlap(self):
        b = RoiBounds(np.zeros(3), np.ones(3), 0.1)
        with pytest.raises(ValueError):
            midplane_grid(b, [0, 1, 0], 0.5, 1.0, 1.0, 1.0)
