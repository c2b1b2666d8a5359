import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lccalib.density import (
    FORWARD_FACING,
    CameraPlan,
    FeatureDensity,
    feature_density,
    manual_plan,
    plan_cameras_density,
    plan_cameras_fov,
    plan_cameras_initial_guess,
    sphere_poses,
)
from lccalib.errors import NoMasks, ZeroBaselineDensity
from lccalib.geometry import Intrinsics
from lccalib.masks import CornerPoint, Mask
from lccalib.projection import FieldOfView


def fake_mask(mask_id, r0, c0, h, w, n_corners, shape=(64, 96)):
    raster = np.zeros(shape, dtype=bool)
    raster[r0:r0 + h, c0:c0 + w] = True
    mask = Mask.from_raster(mask_id, raster)
    mask.corners = [
        CornerPoint(np.array([float(c0), float(r0)]), np.zeros((6, 2)), np.zeros((7, 7)))
        for _ in range(n_corners)
    ]
    return mask


def density_of(d):
    return FeatureDensity(d, 1.0)


class TestFeatureDensity:
    def test_two_disjoint_masks_frozen(self):
        # 4 corners each, areas 100 + 100, union 200.
        a = fake_mask(0, 10, 10, 10, 10, 4)
        b = fake_mask(1, 10, 40, 10, 10, 4)
        d = feature_density([a, b])
        assert d.textural == pytest.approx(math.log(64.0))
        assert d.structural == pytest.approx(2.0 * math.log(2.0))
        assert d.total == pytest.approx(math.log(64.0) * 2.0 * math.log(2.0))

    def test_corner_duplication_shifts_textural_by_2ln2(self):
        a = fake_mask(0, 10, 10, 10, 10, 4)
        b = fake_mask(1, 10, 40, 10, 10, 4)
        base = feature_density([a, b])
        a2 = fake_mask(0, 10, 10, 10, 10, 8)
        b2 = fake_mask(1, 10, 40, 10, 10, 8)
        doubled = feature_density([a2, b2])
        assert doubled.textural - base.textural == pytest.approx(2.0 * math.log(2.0))
        assert doubled.structural == pytest.approx(base.structural)

    def test_single_mask_zero_structural(self):
        d = feature_density([fake_mask(0, 10, 10, 20, 20, 4)])
        assert d.structural == 0.0
        assert d.total == 0.0

    def test_empty_raises(self):
        with pytest.raises(NoMasks):
            feature_density([])

    def test_tiny_masks_dropped(self):
        big = fake_mask(0, 10, 10, 20, 20, 4)
        tiny = fake_mask(1, 50, 50, 2, 2, 4)  # 4 px < 9 px floor
        with_it = feature_density([big, tiny])
        without = feature_density([big])
        assert with_it.total == pytest.approx(without.total)

    @given(seed=st.integers(0, 300))
    @settings(max_examples=25)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        masks = [
            fake_mask(i, 5 + 12 * (i // 3), 5 + 28 * (i % 3), 8, 10, int(rng.integers(1, 9)))
            for i in range(6)
        ]
        base = feature_density(masks)
        order = rng.permutation(6)
        shuffled = feature_density([masks[i] for i in order])
        assert shuffled.textural == pytest.approx(base.textural, abs=1e-12)
        assert shuffled.structural == pytest.approx(base.structural, abs=1e-12)

    def test_area_scale_invariance_of_structural(self):
        small = [fake_mask(0, 4, 4, 8, 8, 4), fake_mask(1, 4, 24, 8, 12, 4)]
        large = [
            fake_mask(0, 8, 8, 16, 16, 4, shape=(128, 192)),
            fake_mask(1, 8, 48, 16, 24, 4, shape=(128, 192)),
        ]
        ds, dl = feature_density(small), feature_density(large)
        assert ds.structural == pytest.approx(dl.structural, abs=1e-12)


class TestDensityPlan:
    def test_ratio_three(self):
        plan = plan_cameras_density(
            density_of(12.0), density_of(12.0), density_of(4.0), density_of(4.0)
        )
        assert plan.n_intensity == 3 and plan.n_depth == 3

    def test_ceil_behavior(self):
        plan = plan_cameras_density(
            density_of(12.1), density_of(4.0), density_of(4.0), density_of(4.0)
        )
        assert plan.n_intensity == 4
        assert plan.n_depth == 1

    def test_clamped_to_n_max(self):
        plan = plan_cameras_density(
            density_of(100.0), density_of(100.0), density_of(1.0), density_of(1.0)
        )
        assert plan.n_intensity == 7 and plan.n_depth == 7

    def test_zero_baseline_raises(self):
        with pytest.raises(ZeroBaselineDensity):
            plan_cameras_density(
                density_of(5.0), density_of(5.0), density_of(0.0), density_of(1.0)
            )

    @given(cam=st.floats(1.0, 50.0), base=st.floats(0.5, 50.0), bump=st.floats(0.0, 10.0))
    @settings(max_examples=60)
    def test_monotonicity(self, cam, base, bump):
        lo = plan_cameras_density(
            density_of(cam), density_of(cam), density_of(base + bump), density_of(base + bump)
        )
        hi = plan_cameras_density(
            density_of(cam + bump), density_of(cam + bump), density_of(base), density_of(base)
        )
        assert hi.n_intensity >= lo.n_intensity

    def test_sphere_layout_order_and_radius(self):
        poses = sphere_poses(7, radius=0.3)
        centers = np.array([p.camera_center() for p in poses])
        expected = np.array(
            [
                [0, 0, 0],
                [0.3, 0, 0], [-0.3, 0, 0],
                [0, 0.3, 0], [0, -0.3, 0],
                [0, 0, 0.3], [0, 0, -0.3],
            ]
        )
        assert np.allclose(centers, expected, atol=1e-12)
        for p in poses:
            assert np.linalg.norm(p.t) <= 0.3 + 1e-12
            assert np.allclose(p.R, FORWARD_FACING)

    def test_second_shell_at_half_radius(self):
        poses = sphere_poses(9, radius=0.3)
        centers = np.array([p.camera_center() for p in poses])
        assert np.allclose(centers[7], [0.15, 0, 0])
        assert np.allclose(centers[8], [-0.15, 0, 0])


class TestFovPlan:
    CAM = Intrinsics(fx=50.0, fy=50.0, cx=50.0, cy=50.0, width=100, height=100)

    def test_camera_fov_90(self):
        # width 100, fx 50 -> 2 atan(1) = 90 deg -> 360/90 = 4 views
        plan = plan_cameras_fov(FieldOfView(360.0, 30.0), self.CAM, rho_fov=1.0)
        assert plan.n_intensity == 4

    def test_equal_fov_single_view(self):
        plan = plan_cameras_fov(FieldOfView(90.0, 30.0), self.CAM, rho_fov=1.0)
        assert plan.n_intensity == 1

    def test_slightly_wider_needs_two(self):
        plan = plan_cameras_fov(FieldOfView(91.0, 30.0), self.CAM, rho_fov=1.0)
        assert plan.n_intensity == 2

    def test_rho_scales_count(self):
        plan = plan_cameras_fov(FieldOfView(360.0, 30.0), self.CAM, rho_fov=2.0)
        assert plan.n_intensity == 8

    def test_views_spread_over_span(self):
        plan = plan_cameras_fov(FieldOfView(360.0, 30.0), self.CAM, rho_fov=1.0)
        # all at the origin, orientations fanned in yaw
        for p in plan.poses:
            assert np.allclose(p.camera_center(), 0.0)
        forwards = [p.R.T @ np.array([0.0, 0.0, 1.0]) for p in plan.poses]
        azimuths = sorted(np.degrees(np.arctan2(f[1], f[0])) for f in forwards)
        assert np.allclose(np.diff(azimuths), 90.0)


class TestInitialGuessPlan:
    def test_zero_translation_single_origin_view(self):
        plan = plan_cameras_initial_guess(np.zeros(3), per_meter=4.0)
        assert plan.n_intensity == 1
        assert np.allclose(plan.poses[0].camera_center(), 0.0)

    def test_unit_translation_four_views(self):
        t = np.array([1.0, 0.0, 0.0])
        plan = plan_cameras_initial_guess(t, per_meter=4.0)
        assert plan.n_intensity == 4
        centers = np.array([p.camera_center() for p in plan.poses])
        assert np.allclose(centers[:, 0], [0.0, 1 / 3, 2 / 3, 1.0])

    def test_rounding(self):
        plan = plan_cameras_initial_guess(np.array([0.26, 0, 0]), per_meter=10.0)
        assert plan.n_intensity == 3


class TestPlanValidation:
    def test_counts_must_be_positive(self):
        with pytest.raises(ValueError):
            CameraPlan(0, 1, sphere_poses(1))

    def test_manual_plan(self):
        plan = manual_plan(2, 5)
        assert plan.n_intensity == 2 and plan.n_depth == 5
        assert len(plan.poses) >= 5
        assert len(plan.intensity_poses()) == 2
        assert len(plan.depth_poses()) == 5
