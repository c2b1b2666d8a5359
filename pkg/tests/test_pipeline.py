import numpy as np
import pytest

from lccalib.density import FORWARD_FACING
from lccalib.errors import AllScenesFailed, NoMasks
from lccalib.geometry import error_metrics
from lccalib.matching import SPATIAL, TEXTURAL
from lccalib.pipeline import (
    PipelineSettings,
    SceneInputs,
    calibrate,
    calibrate_prepared,
    depth_shading,
    look_at_orientation,
    match_scene,
    prepare_scene,
)
from lccalib.synthetic import CANONICAL_EXTRINSIC, generate, standard_scene


@pytest.fixture(scope="module")
def scene_data():
    return generate(standard_scene(0))


@pytest.fixture(scope="module")
def prepared(scene_data):
    inputs = SceneInputs.from_synthetic(scene_data)
    return prepare_scene(inputs, scene_data.intrinsics, PipelineSettings())


@pytest.fixture(scope="module")
def three_scenes():
    datas = [generate(standard_scene(i)) for i in range(3)]
    return datas, [SceneInputs.from_synthetic(d) for d in datas]


class TestDepthShading:
    def test_zero_pixels_stay_zero(self):
        depth = np.zeros((10, 10))
        depth[2, 3] = 4.0
        shade = depth_shading(depth)
        assert shade[0, 0] == 0.0
        assert (shade > 0).sum() == 1

    def test_near_bright_far_dim(self):
        depth = np.zeros((4, 4))
        depth[0, 0], depth[1, 1], depth[2, 2] = 2.0, 6.0, 10.0
        shade = depth_shading(depth)
        assert shade[0, 0] == 1.0
        assert shade[2, 2] == pytest.approx(0.1)
        assert shade[0, 0] > shade[1, 1] > shade[2, 2]

    def test_constant_field_uniformly_bright(self):
        shade = depth_shading(np.full((5, 5), 7.0))
        assert np.all(shade == 1.0)

    def test_all_zero(self):
        assert np.all(depth_shading(np.zeros((5, 5))) == 0.0)


class TestLookAtOrientation:
    def test_forward_matches_front_facing(self):
        R = look_at_orientation([1.0, 0.0, 0.0])
        assert np.allclose(R, FORWARD_FACING, atol=1e-12)

    def test_rotation_properties(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            d = rng.normal(size=3)
            R = look_at_orientation(d)
            assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(R) == pytest.approx(1.0)
            # optical axis (third row) points along the requested direction
            assert np.dot(R[2], d / np.linalg.norm(d)) == pytest.approx(1.0)

    def test_image_up_follows_world_up(self):
        # row y points image-down, so -y should have positive world-Z
        for d in ([1, 1, 0], [0, 1, 0.2], [-2, 1, -0.5]):
            R = look_at_orientation(d)
            assert -R[1][2] > 0

    def test_degenerate_directions(self):
        assert np.allclose(look_at_orientation([0, 0, 0]), FORWARD_FACING)
        R = look_at_orientation([0.0, 0.0, 1.0])  # parallel to world up
        assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.dot(R[2], [0, 0, 1]) == pytest.approx(1.0)


class TestPrepareScene:
    def test_both_pathways_present(self, prepared):
        pathways = {v.pathway for v in prepared.views}
        assert pathways == {TEXTURAL, SPATIAL}

    def test_views_carry_traced_corners(self, prepared):
        for view in prepared.views:
            assert view.masks
            for mask in view.masks:
                assert mask.corners
                for corner in mask.corners:
                    assert corner.lidar_point is not None
                    assert corner.lidar_point.shape == (3,)

    def test_depth_ranges_ordered_positive(self, prepared):
        for view in prepared.views:
            lo, hi = view.depth_range
            assert 0 < lo <= hi

    def test_no_depth_image_disables_spatial_path(self, scene_data):
        inputs = SceneInputs(scene_data.cloud, scene_data.image,
                             list(scene_data.masks))
        prep = prepare_scene(inputs, scene_data.intrinsics, PipelineSettings())
        assert {v.pathway for v in prep.views} == {TEXTURAL}

    def test_no_camera_masks_raises(self, scene_data):
        inputs = SceneInputs(scene_data.cloud, scene_data.image, [])
        with pytest.raises(NoMasks):
            prepare_scene(inputs, scene_data.intrinsics, PipelineSettings())


class TestMatchScene:
    def test_noiseless_matches_are_exact(self, scene_data, prepared):
        bundle = match_scene(prepared, PipelineSettings())
        assert {cs.pathway for cs in bundle.corr_sets} == {TEXTURAL, SPATIAL}
        intr = scene_data.intrinsics
        for cs in bundle.corr_sets:
            assert len(cs) >= 4
            cam = CANONICAL_EXTRINSIC.apply(cs.points)
            uv = np.stack([intr.fx * cam[:, 0] / cam[:, 2] + intr.cx,
                           intr.fy * cam[:, 1] / cam[:, 2] + intr.cy], axis=1)
            assert np.abs(uv - cs.pixels).max() < 1e-6


class TestCalibrate:
    def test_noiseless_recovery(self, three_scenes):
        datas, inputs = three_scenes
        out = calibrate(inputs, datas[0].intrinsics, PipelineSettings())
        e_r, e_t = error_metrics(out.pose, CANONICAL_EXTRINSIC)
        assert e_r < 1e-6
        assert e_t < 1e-8
        assert len(out.solved_scenes) == 3
        assert out.multi is not None and out.multi.converged

    def test_deterministic(self, three_scenes):
        datas, inputs = three_scenes
        a = calibrate(inputs, datas[0].intrinsics, PipelineSettings(seed=5))
        b = calibrate(inputs, datas[0].intrinsics, PipelineSettings(seed=5))
        assert np.array_equal(a.pose.R, b.pose.R)
        assert np.array_equal(a.pose.t, b.pose.t)

    def test_single_scene_flag_skips_joint_stage(self, three_scenes):
        datas, inputs = three_scenes
        out = calibrate(inputs, datas[0].intrinsics,
                        PipelineSettings(single_scene=True))
        assert out.multi is None
        e_r, _ = error_metrics(out.pose, CANONICAL_EXTRINSIC)
        assert e_r < 1e-6

    def test_faulty_scene_is_isolated(self, three_scenes):
        datas, inputs = three_scenes
        broken = SceneInputs(datas[1].cloud, datas[1].image, [])
        out = calibrate([inputs[0], broken, inputs[2]], datas[0].intrinsics,
                        PipelineSettings())
        statuses = {s.scene_index: s.status for s in out.scenes}
        assert statuses == {0: "ok", 1: "skipped", 2: "ok"}
        skipped = next(s for s in out.scenes if s.status == "skipped")
        assert "mask" in skipped.reason.lower()
        e_r, _ = error_metrics(out.pose, CANONICAL_EXTRINSIC)
        assert e_r < 1e-6

    def test_all_scenes_failing_raises(self, three_scenes):
        datas, _ = three_scenes
        broken = [SceneInputs(d.cloud, d.image, []) for d in datas[:2]]
        with pytest.raises(AllScenesFailed) as err:
            calibrate(broken, datas[0].intrinsics, PipelineSettings())
        assert "scene 0" in str(err.value)
        assert "scene 1" in str(err.value)


class TestCalibratePrepared:
    def test_reuse_matches_fresh_run(self):
        datas = [generate(standard_scene(i)) for i in (4, 5)]
        inputs = [SceneInputs.from_synthetic(d) for d in datas]
        settings = PipelineSettings()
        preps = [prepare_scene(inp, datas[0].intrinsics, settings, i)
                 for i, inp in enumerate(inputs)]
        a = calibrate_prepared(preps, datas[0].intrinsics, settings)
        b = calibrate_prepared(preps, datas[0].intrinsics, settings)
        fresh = calibrate(inputs, datas[0].intrinsics, settings)
        for other in (b, fresh):
            assert np.array_equal(a.pose.R, other.pose.R)
            assert np.array_equal(a.pose.t, other.pose.t)
