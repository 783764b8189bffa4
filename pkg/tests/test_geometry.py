import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation, Slerp

from viewplan.errors import DegeneratePointMap, InvalidCount, InvalidDepth, ValidationError
from viewplan.geometry import (
    CameraIntrinsics,
    Pose,
    Trajectory,
    axis_angle,
    estimate_focal_weiszfeld,
    fit_focal_weiszfeld,
    focal_objective,
    interpolate_poses,
    look_at,
    project,
    quaternion_to_rotation,
    rotation_angle,
    rotation_to_quaternion,
    unproject,
)
from viewplan.pointcloud import PointMap

from conftest import random_pose
from oracles import grid_search_focal, synthetic_pointmap


def test_intrinsics_default_principal_point():
    k = CameraIntrinsics(300.0, 320, 240)
    assert (k.principal_x, k.principal_y) == (160.0, 120.0)


@pytest.mark.parametrize("args", [(0.0, 10, 10), (-1.0, 10, 10), (10.0, 1, 10), (10.0, 10, 1)])
def test_intrinsics_rejects_bad_values(args):
    with pytest.raises(ValidationError):
        CameraIntrinsics(*args)


def test_pose_rejects_non_rotation():
    with pytest.raises(ValidationError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))
    with pytest.raises(ValidationError):
        Pose(np.eye(3) * 1.01, np.zeros(3))


class TestProject:
    def test_on_axis_point_hits_principal_point(self, k100):
        assert project([0, 0, 2], Pose.identity(), k100) == (50.0, 50.0, 2.0)

    def test_behind_camera_is_absent(self, k100):
        assert project([0, 0, -1], Pose.identity(), k100) is None

    def test_off_axis(self, k100):
        assert project([0.5, 0.25, 2], Pose.identity(), k100) == (75.0, 62.5, 2.0)

    def test_outside_image_is_absent(self, k100):
        assert project([2.0, 0, 2], Pose.identity(), k100) is None

    def test_on_image_plane_is_absent(self, k100):
        assert project([0.1, 0, 0], Pose.identity(), k100) is None


class TestUnproject:
    def test_center(self, k100):
        np.testing.assert_array_equal(unproject(50, 50, 2, Pose.identity(), k100), [0, 0, 2])

    def test_inverse_of_projection_example(self, k100):
        np.testing.assert_allclose(unproject(75, 62.5, 2, Pose.identity(), k100), [0.5, 0.25, 2], atol=1e-15)

    @pytest.mark.parametrize("d", [0.0, -1.0])
    def test_non_positive_depth(self, k100, d):
        with pytest.raises(InvalidDepth):
            unproject(10, 10, d, Pose.identity(), k100)

    def test_round_trip_1000(self, rng):
        k = CameraIntrinsics(420.0, 640, 480)
        worst = 0.0
        for _ in range(1000):
            pose = random_pose(rng)
            u, v = rng.uniform(0, 640), rng.uniform(0, 480)
            d = rng.uniform(0.1, 50)
            got = project(unproject(u, v, d, pose, k), pose, k)
            assert got is not None
            worst = max(worst, abs(got[0] - u), abs(got[1] - v), abs(got[2] - d))
        assert worst < 1e-9


class TestPose:
    def test_compose_inverse_is_identity(self, rng):
        for _ in range(200):
            p = random_pose(rng, 5.0)
            e = p @ p.inverse()
            assert np.max(np.abs(e.rotation - np.eye(3))) < 1e-9
            assert np.max(np.abs(e.translation)) < 1e-9

    def test_json_round_trip_is_bit_exact(self, rng):
        k = CameraIntrinsics(123.456789, 64, 48)
        traj = Trajectory(tuple(random_pose(rng) for _ in range(5)), k)
        back = Trajectory.loads(traj.dumps())
        assert back.intrinsics == k
        assert all(a == b for a, b in zip(traj.poses, back.poses))
        assert json.loads(traj.dumps())["poses"][0]["rotation"].__len__() == 9

    def test_look_at_points_forward(self):
        p = look_at([1.0, -2.0, 0.5], [0.0, 0.0, 3.0])
        d = np.array([0.0, 0.0, 3.0]) - [1.0, -2.0, 0.5]
        np.testing.assert_allclose(p.forward, d / np.linalg.norm(d), atol=1e-12)

    def test_look_at_identity(self):
        p = look_at([0, 0, 0], [0, 0, 5])
        np.testing.assert_allclose(p.rotation, np.eye(3), atol=1e-15)

    def test_look_at_along_up_axis(self):
        p = look_at([0, -3, 0], [0, 0, 0])
        np.testing.assert_allclose(p.forward, [0, 1, 0], atol=1e-12)


class TestQuaternions:
    def test_round_trip_against_scipy(self, rng):
        for _ in range(200):
            r = Rotation.random(random_state=rng.integers(1 << 31))
            q = rotation_to_quaternion(r.as_matrix())
            x, y, z, w = r.as_quat()
            ref = np.array([w, x, y, z]) * (1 if w >= 0 else -1)
            np.testing.assert_allclose(q, ref, atol=1e-12)
            np.testing.assert_allclose(quaternion_to_rotation(q), r.as_matrix(), atol=1e-12)


class TestInterpolate:
    def test_same_pose(self, rng):
        p = random_pose(rng)
        out = interpolate_poses(p, p, 5)
        assert len(out) == 5
        for q in out:
            np.testing.assert_allclose(q.rotation, p.rotation, atol=1e-12)
            np.testing.assert_allclose(q.translation, p.translation, atol=1e-12)

    def test_endpoints_exact(self, rng):
        a, b = random_pose(rng), random_pose(rng)
        out = interpolate_poses(a, b, 7)
        assert out[0] == a and out[-1] == b

    def test_midpoint_halves_angle(self):
        b = Pose(axis_angle([0, 1, 0], math.pi / 2), [0, 0, 0])
        mid = interpolate_poses(Pose.identity(), b, 3)[1]
        assert abs(math.degrees(rotation_angle(mid.rotation)) - 45.0) < 1e-9

    def test_constant_angular_steps(self, rng):
        # oracle: relative angle from quaternions, 2 acos |<q1, q2>|
        for _ in range(20):
            a, b = random_pose(rng), random_pose(rng)
            out = interpolate_poses(a, b, 25)
            qs = [Rotation.from_matrix(p.rotation).as_quat() for p in out]
            steps = [2 * math.acos(min(1.0, abs(float(np.dot(q1, q2))))) for q1, q2 in zip(qs, qs[1:])]
            assert max(steps) - min(steps) < 1e-9

    def test_matches_scipy_slerp(self, rng):
        a, b = random_pose(rng), random_pose(rng)
        out = interpolate_poses(a, b, 11)
        ref = Slerp([0, 1], Rotation.from_matrix([a.rotation, b.rotation]))(np.linspace(0, 1, 11))
        for p, r in zip(out, ref.as_matrix()):
            np.testing.assert_allclose(p.rotation, r, atol=1e-10)
        np.testing.assert_allclose(out[5].translation, (a.translation + b.translation) / 2, atol=1e-12)

    def test_shortest_arc(self):
        a = Pose(axis_angle([0, 0, 1], math.radians(170)), np.zeros(3))
        b = Pose(axis_angle([0, 0, 1], math.radians(-170)), np.zeros(3))
        mid = interpolate_poses(a, b, 3)[1]
        assert abs(math.degrees(rotation_angle(mid.rotation)) - 180.0) < 1e-6

    def test_count_too_small(self):
        with pytest.raises(InvalidCount):
            interpolate_poses(Pose.identity(), Pose.identity(), 1)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(2, 40))
    def test_outputs_are_rotations(self, seed, count):
        rng = np.random.default_rng(seed)
        for p in interpolate_poses(random_pose(rng), random_pose(rng), count):
            assert np.max(np.abs(p.rotation.T @ p.rotation - np.eye(3))) < 1e-9
            assert np.linalg.det(p.rotation) > 0


# --------------------------------------------------------------------------
# focal recovery


class TestWeiszfeld:
    def test_noiseless_recovery(self, rng):
        pm = synthetic_pointmap(500.0, 64, 48, rng)
        assert abs(estimate_focal_weiszfeld(pm) - 500.0) < 1e-3

    def test_noisy_matches_grid_search(self, rng):
        pm = synthetic_pointmap(500.0, 32, 24, rng, noise=0.01)
        f = estimate_focal_weiszfeld(pm)
        assert abs(f - grid_search_focal(pm)) < 0.1

    def test_zero_confidence_is_degenerate(self, rng):
        pm = synthetic_pointmap(500.0, 16, 12, rng, confidence=np.zeros((12, 16)))
        with pytest.raises(DegeneratePointMap):
            estimate_focal_weiszfeld(pm)

    def test_single_pixel_is_degenerate(self, rng):
        conf = np.zeros((12, 16))
        conf[3, 4] = 1.0
        with pytest.raises(DegeneratePointMap):
            estimate_focal_weiszfeld(synthetic_pointmap(500.0, 16, 12, rng, confidence=conf))

    def test_behind_camera_pixels_ignored(self, rng):
        pm = synthetic_pointmap(400.0, 32, 24, rng)
        pts = np.array(pm.points)
        pts[:5, :, 2] = -1.0
        f = estimate_focal_weiszfeld(PointMap(pts, pm.confidence, pm.colors))
        assert abs(f - 400.0) < 1e-3

    def test_starts_at_max_dimension(self, rng):
        pm = synthetic_pointmap(500.0, 64, 48, rng, noise=0.01)
        fit = fit_focal_weiszfeld(pm, max_iters=0)
        assert fit.focal_px == 64.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(150, 1500), st.floats(0.0, 0.05))
    def test_objective_never_increases(self, seed, focal, noise):
        rng = np.random.default_rng(seed)
        conf = rng.uniform(0, 2, size=(12, 16))
        pm = synthetic_pointmap(focal, 16, 12, rng, noise=noise, confidence=conf)
        fit = fit_focal_weiszfeld(pm, max_iters=25, tol=0.0)
        obj = np.array(fit.objectives)
        assert np.all(np.diff(obj) <= 1e-9 * obj[:-1] + 1e-12)

    def test_objective_helper_matches_fit(self, rng):
        pm = synthetic_pointmap(500.0, 16, 12, rng, noise=0.01)
        fit = fit_focal_weiszfeld(pm)
        assert focal_objective(pm, fit.focal_px) == pytest.approx(fit.objectives[-1], rel=1e-12)


def test_segmented_trajectory_reads_as_concatenation(rng):
    k = CameraIntrinsics(50.0, 16, 16)
    a, b = Trajectory((random_pose(rng),), k), Trajectory((random_pose(rng), random_pose(rng)), k)
    d = {"intrinsics": k.to_dict(), "segments": [{"poses": a.to_dict()["poses"]}, {"poses": b.to_dict()["poses"]}]}
    back = Trajectory.from_dict(d)
    assert list(back.poses) == list(a.poses) + list(b.poses)


def test_malformed_trajectory_is_validation_error():
    with pytest.raises(ValidationError):
        Trajectory.from_dict({"poses": [{"rotation": [1, 0]}], "intrinsics": {}})
