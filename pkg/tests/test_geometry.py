import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from lccalib.errors import NonPositiveDepth
from lccalib.geometry import (
    Intrinsics,
    Pose,
    backproject_pixel,
    error_metrics,
    euler_deg_to_matrix,
    matrix_to_euler_deg,
    nearest_rotation,
    project_pinhole,
    project_points,
    reprojection_error,
)

CAM = Intrinsics(fx=100.0, fy=100.0, cx=50.0, cy=50.0, width=100, height=100)

# Published KITTI-style extrinsic (velodyne -> left gray camera), used as a
# realistic orthonormal-to-4-significant-figures input.
KITTI_LEFT_R = np.array(
    [
        [-2.5863e-04, -9.9997e-01, -7.5239e-03],
        [-6.8893e-03, 7.5255e-03, -9.9995e-01],
        [9.9998e-01, -2.0678e-04, -6.8911e-03],
    ]
)
KITTI_LEFT_T = np.array([0.070478, -0.057913, -0.286353])


angles = st.floats(min_value=-179.0, max_value=179.0)
safe_pitch = st.floats(min_value=-85.0, max_value=85.0)


def random_pose(rng, max_pitch=80.0):
    yaw = rng.uniform(-170, 170)
    pitch = rng.uniform(-max_pitch, max_pitch)
    roll = rng.uniform(-170, 170)
    t = rng.uniform(-2, 2, size=3)
    return Pose.from_euler_deg(yaw, pitch, roll, t)


class TestProjection:
    def test_principal_ray(self):
        uv = project_pinhole(np.array([0.0, 0.0, 2.0]), CAM)
        assert np.allclose(uv, [50.0, 50.0])

    def test_offset_point(self):
        # x = 0.02 at depth 2 moves the pixel by fx * x / z = 1 px.
        uv = project_pinhole(np.array([0.02, 0.0, 2.0]), CAM)
        assert np.allclose(uv, [51.0, 50.0])

    def test_rejects_zero_and_negative_depth(self):
        for z in (0.0, -1.0):
            with pytest.raises(NonPositiveDepth):
                project_pinhole(np.array([0.0, 0.0, z]), CAM)

    def test_vectorized_matches_scalar(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform([-1, -1, 0.5], [1, 1, 5], size=(40, 3))
        pix, z, valid = project_points(pts, CAM)
        assert valid.all()
        for i in range(len(pts)):
            assert np.allclose(pix[i], project_pinhole(pts[i], CAM))

    def test_vectorized_flags_behind(self):
        pts = np.array([[0, 0, 1.0], [0, 0, -1.0]])
        pix, _, valid = project_points(pts, CAM)
        assert valid.tolist() == [True, False]
        assert np.isnan(pix[1]).all()

    @given(
        u=st.floats(min_value=0, max_value=99),
        v=st.floats(min_value=0, max_value=99),
        depth=st.floats(min_value=0.1, max_value=50.0),
    )
    def test_backprojection_round_trip(self, u, v, depth):
        p = backproject_pixel((u, v), depth, CAM)
        assert p[2] == pytest.approx(depth)
        assert np.allclose(project_pinhole(p, CAM), [u, v], atol=1e-9)


class TestReprojectionError:
    def test_pure_translation_case(self):
        pose = Pose(np.eye(3), np.array([0.02, 0.0, 0.0]))
        err = reprojection_error(pose, np.array([0.0, 0.0, 2.0]), (50.0, 50.0), CAM)
        assert err == pytest.approx(1.0)

    def test_three_four_five(self):
        # Projected pixel lands at (51.5, 52.0): offsets 1.5 and 2.0 -> 2.5.
        pose = Pose.identity()
        err = reprojection_error(pose, np.array([0.03, 0.04, 2.0]), (50.0, 50.0), CAM)
        assert err == pytest.approx(2.5)

    def test_raises_behind_camera(self):
        with pytest.raises(NonPositiveDepth):
            reprojection_error(Pose.identity(), np.array([0, 0, -3.0]), (0, 0), CAM)


class TestEuler:
    def test_yaw_90_matrix(self):
        R = euler_deg_to_matrix(90.0, 0.0, 0.0)
        assert np.allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)

    def test_matches_scipy_convention(self):
        # Independent oracle: intrinsic Z-Y-X in scipy's notation.
        rng = np.random.default_rng(3)
        for _ in range(200):
            y, p, r = rng.uniform(-179, 179), rng.uniform(-89, 89), rng.uniform(-179, 179)
            mine = euler_deg_to_matrix(y, p, r)
            ref = Rotation.from_euler("ZYX", [y, p, r], degrees=True).as_matrix()
            assert np.allclose(mine, ref, atol=1e-12)

    @given(yaw=angles, pitch=safe_pitch, roll=angles)
    @settings(max_examples=200)
    def test_round_trip(self, yaw, pitch, roll):
        R = euler_deg_to_matrix(yaw, pitch, roll)
        e = matrix_to_euler_deg(R)
        R2 = euler_deg_to_matrix(e.yaw, e.pitch, e.roll)
        assert np.allclose(R, R2, atol=1e-9)

    def test_decomposition_values(self):
        e = matrix_to_euler_deg(euler_deg_to_matrix(10.0, -20.0, 30.0))
        assert (e.yaw, e.pitch, e.roll) == pytest.approx((10.0, -20.0, 30.0))


class TestPose:
    def test_rejects_non_rotation(self):
        with pytest.raises(ValueError):
            Pose(np.eye(3) * 2.0, np.zeros(3))

    def test_reflection_rejected(self):
        R = np.diag([1.0, 1.0, -1.0])
        with pytest.raises(ValueError):
            Pose(R, np.zeros(3))

    def test_snaps_slightly_off_rotation(self):
        pose = Pose(KITTI_LEFT_R, KITTI_LEFT_T)
        assert np.linalg.norm(pose.R.T @ pose.R - np.eye(3)) < 1e-12

    def test_immutable(self):
        pose = Pose.identity()
        with pytest.raises(AttributeError):
            pose.R = np.eye(3)
        with pytest.raises(ValueError):
            pose.t[0] = 1.0

    def test_compose_inverse(self):
        rng = np.random.default_rng(11)
        a, b = random_pose(rng), random_pose(rng)
        p = rng.uniform(-1, 1, 3)
        assert np.allclose((a @ b).apply(p), a.apply(b.apply(p)))
        assert (a @ a.inverse()).almost_equal(Pose.identity(), tol=1e-12)

    def test_camera_center(self):
        pose = Pose.from_euler_deg(0, 0, 0, t=(1.0, 0.0, 0.0))
        assert np.allclose(pose.camera_center(), [-1.0, 0.0, 0.0])

    def test_nearest_rotation_projects(self):
        rng = np.random.default_rng(5)
        m = rng.normal(size=(3, 3))
        r = nearest_rotation(m)
        assert np.allclose(r.T @ r, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) == pytest.approx(1.0)


class TestErrorMetrics:
    def test_self_comparison_is_zero(self):
        pose = Pose(KITTI_LEFT_R, KITTI_LEFT_T)
        assert error_metrics(pose, pose) == (0.0, 0.0)

    @given(yaw=angles, pitch=safe_pitch, roll=angles)
    @settings(max_examples=100)
    def test_self_zero_property(self, yaw, pitch, roll):
        pose = Pose.from_euler_deg(yaw, pitch, roll, t=(0.3, -0.2, 0.1))
        e_r, e_t = error_metrics(pose, pose)
        assert e_r == 0.0 and e_t == 0.0

    def test_pure_yaw_difference(self):
        a = Pose.from_euler_deg(10.0, 0.0, 0.0)
        b = Pose.from_euler_deg(12.5, 0.0, 0.0)
        e_r, e_t = error_metrics(a, b)
        assert e_r == pytest.approx(2.5, abs=1e-9)
        assert e_t == pytest.approx(0.0, abs=1e-12)

    def test_translation_difference_is_center_distance(self):
        a = Pose.identity()
        b = Pose(np.eye(3), np.array([1.0, 0.0, 0.0]))
        _, e_t = error_metrics(a, b)
        assert e_t == pytest.approx(1.0)

    def test_symmetry(self):
        rng = np.random.default_rng(23)
        a, b = random_pose(rng), random_pose(rng)
        assert error_metrics(a, b) == pytest.approx(error_metrics(b, a))
