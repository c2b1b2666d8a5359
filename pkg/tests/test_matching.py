import math

import numpy as np
import pytest

from lccalib.errors import NoMatches
from lccalib.geometry import Pose
from lccalib.masks import CornerPoint, Instance, Mask
from lccalib.matching import (
    WIDTH_PERIMETER,
    CorrespondenceSet,
    MaskMatch,
    MaskMatchSet,
    MatchConfig,
    SimilarityTransform,
    corner_cost,
    estimate_similarity,
    greedy_assign,
    match_corners,
    match_masks,
    mutual_best,
    with_view_depths,
)

CANVAS = (96, 128)  # diag = hypot(96, 128) = 160 exactly


def square(cx, cy, half):
    return np.array(
        [
            [cx - half, cy - half],
            [cx + half, cy - half],
            [cx + half, cy + half],
            [cx - half, cy + half],
        ],
        dtype=float,
    )


def rect(cx, cy, hx, hy):
    return np.array(
        [[cx - hx, cy - hy], [cx + hx, cy - hy], [cx + hx, cy + hy], [cx - hx, cy + hy]],
        dtype=float,
    )


def mutual_best_reference(cost, threshold):
    """Brute-force definition: strict row and column minimum, below cutoff."""
    out = []
    n, m = cost.shape
    for i in range(n):
        for j in range(m):
            c = cost[i, j]
            if c >= threshold:
                continue
            if all(cost[i, k] > c for k in range(m) if k != j) and all(
                cost[k, j] > c for k in range(n) if k != i
            ):
                out.append((i, j))
    return out


class TestMutualBest:
    def test_clean_diagonal(self):
        cost = np.array([[1.0, 5.0], [6.0, 2.0]])
        assert set(mutual_best(cost, 10.0)) == {(0, 0), (1, 1)}

    def test_contested_column_yields_single_pair(self):
        # (1, 0) is row 1's best but column 0 already prefers row 0.
        cost = np.array([[1.0, 2.0], [1.5, 1.8]])
        assert mutual_best(cost, 10.0) == [(0, 0)]

    def test_threshold_is_strict(self):
        cost = np.array([[0.5]])
        assert mutual_best(cost, 0.5) == []
        assert mutual_best(cost, 0.5 + 1e-9) == [(0, 0)]

    def test_tied_minimum_rejected(self):
        cost = np.array([[1.0, 1.0], [2.0, 3.0]])
        assert mutual_best(cost, 10.0) == []

    def test_empty(self):
        assert mutual_best(np.zeros((0, 3)), 1.0) == []

    def test_against_bruteforce_reference(self):
        rng = np.random.default_rng(20240817)
        for _ in range(1000):
            n = rng.integers(1, 8)
            m = rng.integers(1, 8)
            cost = rng.uniform(0.0, 1.0, size=(n, m))
            tau = rng.uniform(0.2, 1.2)
            got = sorted(mutual_best(cost, tau))
            want = sorted(mutual_best_reference(cost, tau))
            assert got == want

    def test_injective(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            cost = rng.uniform(size=(6, 6))
            pairs = mutual_best(cost, 2.0)
            rows = [i for i, _ in pairs]
            cols = [j for _, j in pairs]
            assert len(set(rows)) == len(rows)
            assert len(set(cols)) == len(cols)


class TestGreedyAssign:
    def test_cheapest_first(self):
        cost = np.array([[0.1, 0.2], [0.15, 0.12]])
        assert sorted(greedy_assign(cost, 1.0)) == [(0, 0), (1, 1)]

    def test_greedy_not_globally_optimal(self):
        # Greedy locks (0,0)=1 then must take (1,1)=100; the optimal
        # assignment would be the anti-diagonal at total 4.
        cost = np.array([[1.0, 2.0], [2.0, 100.0]])
        assert sorted(greedy_assign(cost, 1000.0)) == [(0, 0), (1, 1)]

    def test_threshold_blocks(self):
        cost = np.array([[0.5, 0.6], [0.7, 0.4]])
        assert greedy_assign(cost, 0.45) == [(1, 1)]
        assert greedy_assign(cost, 0.4) == []


class TestMatchMasks:
    def make(self, polys):
        return [Mask.from_polygon(i, p, CANVAS) for i, p in enumerate(polys)]

    def test_identical_layout(self):
        polys = [square(30, 30, 10), rect(85, 60, 15, 6)]
        res = match_masks(self.make(polys), self.make(polys))
        assert [(p.virtual_id, p.camera_id) for p in res.pairs] == [(0, 0), (1, 1)]
        assert all(p.cost == 0.0 for p in res.pairs)
        # mean perimeter of the four matched contours: 80, 80, 84, 84
        assert res.width == pytest.approx(82.0)

    def test_shift_cost_is_center_distance_over_diagonal(self):
        v = self.make([square(30, 30, 10)])
        c = self.make([square(35, 30, 10)])
        res = match_masks(v, c)
        assert res.pairs[0].cost == pytest.approx(5.0 / 160.0)

    def test_spurious_mask_left_unpaired(self):
        v = self.make([square(30, 30, 10), rect(85, 60, 15, 6)])
        c = self.make([square(30, 30, 10), rect(85, 60, 15, 6), square(110, 20, 6)])
        res = match_masks(v, c)
        assert {(p.virtual_id, p.camera_id) for p in res.pairs} == {(0, 0), (1, 1)}

    def test_threshold_raises(self):
        v = self.make([square(30, 30, 10)])
        c = self.make([square(35, 30, 10)])
        with pytest.raises(NoMatches):
            match_masks(v, c, MatchConfig(mask_threshold=1e-6))

    def test_empty_side_raises(self):
        with pytest.raises(NoMatches):
            match_masks([], self.make([square(30, 30, 10)]))

    def test_injective_pairing_enforced(self):
        t = SimilarityTransform.identity()
        with pytest.raises(ValueError):
            MaskMatchSet(
                (MaskMatch(0, 1, 0.0, t), MaskMatch(2, 1, 0.0, t)), 10.0
            )


class TestEstimateSimilarity:
    def test_identity_for_identical_elongated_mask(self):
        m = Mask.from_polygon(0, rect(50, 40, 20, 8), CANVAS)
        t = estimate_similarity(m, m)
        assert t.scale == pytest.approx(1.0)
        assert not t.degenerate
        np.testing.assert_allclose(t.rotation, np.eye(2), atol=1e-9)
        np.testing.assert_allclose(t.translation, 0.0, atol=1e-9)

    def test_double_scale_exact(self):
        v = Mask.from_polygon(0, rect(30, 28, 20, 8), CANVAS)
        c = Mask.from_polygon(0, rect(50, 36, 40, 16), CANVAS)
        t = estimate_similarity(v, c)
        assert t.scale == pytest.approx(2.0, abs=1e-6)
        np.testing.assert_allclose(
            t.apply(v.instance.center), c.instance.center, atol=1e-9
        )

    def test_rotation_recovered_for_elongated_mask(self):
        ang = math.radians(30.0)
        rot = np.array(
            [[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]]
        )
        base = rect(0, 0, 30, 5)
        v = Mask.from_polygon(0, base + [64, 48], CANVAS)
        c = Mask.from_polygon(0, base @ rot.T + [64, 48], CANVAS)
        t = estimate_similarity(v, c)
        assert not t.degenerate
        got = math.degrees(math.atan2(t.rotation[1, 0], t.rotation[0, 0]))
        assert abs(got - 30.0) < 1.0

    def test_compact_mask_falls_back_to_identity(self):
        v = Mask.from_polygon(0, square(40, 40, 10), CANVAS)
        c = Mask.from_polygon(0, square(60, 50, 10), CANVAS)
        t = estimate_similarity(v, c)
        assert t.degenerate
        np.testing.assert_array_equal(t.rotation, np.eye(2))
        np.testing.assert_allclose(t.translation, [20.0, 10.0], atol=1e-9)

    def test_zero_extent_instance_falls_back(self):
        flat = Mask(0, np.zeros((3, 2)), np.zeros(CANVAS, bool),
                    Instance(np.array([10.0, 10.0]), 0.0, 5.0))
        other = Mask.from_polygon(1, square(40, 40, 10), CANVAS)
        t = estimate_similarity(flat, other)
        assert t.degenerate
        assert t.scale == 1.0
        np.testing.assert_allclose(t.translation, [30.0, 30.0])

    def test_apply_invert_round_trip(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            ang = rng.uniform(-math.pi, math.pi)
            rot = np.array(
                [[math.cos(ang), -math.sin(ang)], [math.sin(ang), math.cos(ang)]]
            )
            t = SimilarityTransform(
                float(rng.uniform(0.2, 5.0)), rot, rng.uniform(-50, 50, 2)
            )
            pts = rng.uniform(-100, 100, (12, 2))
            np.testing.assert_allclose(t.invert().apply(t.apply(pts)), pts, atol=1e-9)

    def test_rejects_improper_rotation(self):
        with pytest.raises(ValueError):
            SimilarityTransform(1.0, np.diag([1.0, -1.0]), np.zeros(2))


def corner(pos, neighbors, fill, lidar=None):
    return CornerPoint(
        position=np.asarray(pos, float),
        neighbors=np.asarray(neighbors, float),
        texture=np.full((7, 7), fill),
        lidar_point=None if lidar is None else np.asarray(lidar, float),
    )


class TestCornerCost:
    def test_identical_corner_costs_zero(self):
        ci = corner([40, 40], [[30, 40], [50, 45]], 0.5)
        cj = corner([40, 40], [[30, 40], [50, 45]], 0.5)
        assert corner_cost(ci, cj, SimilarityTransform.identity(), 80.0) == 0.0

    def test_texture_offset_enters_linearly(self):
        ci = corner([40, 40], [[30, 40], [50, 45]], 0.5)
        cj = corner([40, 40], [[30, 40], [50, 45]], 0.6)
        cost = corner_cost(ci, cj, SimilarityTransform.identity(), 80.0)
        assert cost == pytest.approx(0.1)
        cfg = MatchConfig(beta_textural=2.5)
        cost = corner_cost(ci, cj, SimilarityTransform.identity(), 80.0, cfg)
        assert cost == pytest.approx(0.25)

    def test_reversed_neighbor_ring_still_zero(self):
        # The same physical boundary traced in the opposite direction lists
        # the neighbor ring back to front; the orientation minimum absorbs it.
        ci = corner([40, 40], [[30, 40], [50, 45]], 0.5)
        cj = corner([40, 40], [[50, 45], [30, 40]], 0.5)
        assert corner_cost(ci, cj, SimilarityTransform.identity(), 80.0) == 0.0

    def test_distance_term_frozen_value(self):
        # offset 4 px, width L=4: denominator L^2/2 = 8, cost 1 - exp(-16/8)
        ci = corner([0, 0], [[0, 0], [0, 0]], 0.0)
        cj = corner([4, 0], [[4, 0], [4, 0]], 0.0)
        cost = corner_cost(ci, cj, SimilarityTransform.identity(), 4.0)
        assert abs(cost - 0.8646647168) < 1e-9

    def test_plain_perimeter_width_mode(self):
        ci = corner([0, 0], [[0, 0], [0, 0]], 0.0)
        cj = corner([4, 0], [[4, 0], [4, 0]], 0.0)
        cfg = MatchConfig(width_mode=WIDTH_PERIMETER)
        cost = corner_cost(ci, cj, SimilarityTransform.identity(), 4.0, cfg)
        assert abs(cost - 0.9816843611) < 1e-9

    def test_ablation_toggles(self):
        ci = corner([0, 0], [[10, 0], [0, 10]], 0.2)
        cj = corner([4, 0], [[4, -10], [14, 0]], 0.9)
        t = SimilarityTransform.identity()
        base = corner_cost(ci, cj, t, 4.0, MatchConfig(use_structural=False,
                                                       use_textural=False))
        assert base == pytest.approx(1.0 - math.exp(-2.0))
        with_tex = corner_cost(ci, cj, t, 4.0, MatchConfig(use_structural=False))
        assert with_tex == pytest.approx(base + 0.7)
        full = corner_cost(ci, cj, t, 4.0)
        assert full > with_tex

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        t = SimilarityTransform.identity()
        for _ in range(300):
            ci = corner(rng.uniform(0, 100, 2), rng.uniform(0, 100, (4, 2)),
                        rng.uniform())
            cj = corner(rng.uniform(0, 100, 2), rng.uniform(0, 100, (4, 2)),
                        rng.uniform())
            assert corner_cost(ci, cj, t, 50.0) >= 0.0


def boxed_mask(mask_id, cx, cy, half, fill, with_lidar=True, skip_last=False):
    """A square mask whose four polygon vertices are corner points."""
    poly = square(cx, cy, half)
    m = Mask.from_polygon(mask_id, poly, CANVAS)
    corners = []
    for k, p in enumerate(poly):
        lidar = None
        if with_lidar and not (skip_last and k == len(poly) - 1):
            lidar = [float(mask_id), float(k), 5.0]
        corners.append(
            corner(p, [poly[(k - 1) % 4], poly[(k + 1) % 4]], fill, lidar)
        )
    m.corners = corners
    return m


class TestMatchCorners:
    def build_scene(self):
        v = [boxed_mask(0, 30, 30, 12, 0.3, skip_last=True),
             boxed_mask(1, 85, 60, 10, 0.7)]
        c = [boxed_mask(0, 30, 30, 12, 0.3, with_lidar=False),
             boxed_mask(1, 85, 60, 10, 0.7, with_lidar=False)]
        return v, c

    def test_identity_scene_emits_traced_corners(self):
        v, c = self.build_scene()
        matches = match_masks(v, c)
        res = match_corners(v, c, matches, "textural", 0)
        # mask 0 contributes 3 corners (one lacks a traceback), mask 1 all 4
        assert len(res) == 7
        assert np.all(res.costs == 0.0)
        traced = {tuple(p) for p in res.points}
        assert (0.0, 3.0, 5.0) not in traced
        assert (1.0, 2.0, 5.0) in traced
        for pt, px in zip(res.points, res.pixels):
            mask = v[int(pt[0])]
            k = int(pt[1])
            np.testing.assert_allclose(px, mask.corners[k].position)

    def test_tau_filters_everything(self):
        v, c = self.build_scene()
        matches = match_masks(v, c)
        res = match_corners(v, c, matches, "textural", 0,
                            MatchConfig(tau=0.0))
        assert len(res) == 0

    def test_metadata_fields(self):
        v, c = self.build_scene()
        res = match_corners(v, c, match_masks(v, c), "spatial", 3)
        assert res.pathway == "spatial"
        assert res.view_index == 3

    def test_neighbor_mask_recruitment(self):
        v, c = self.build_scene()
        # an unmatched mask near matched mask 0 (within 1.5x its diagonal)
        v.append(boxed_mask(7, 52, 22, 4, 0.5))
        c.append(boxed_mask(7, 52, 22, 4, 0.5, with_lidar=False))
        # and one far beyond every matched mask's neighborhood
        v.append(boxed_mask(8, 120, 90, 4, 0.5))
        c.append(boxed_mask(8, 120, 90, 4, 0.5, with_lidar=False))
        t = SimilarityTransform.identity()
        matches = MaskMatchSet(
            (MaskMatch(0, 0, 0.0, t), MaskMatch(1, 1, 0.0, t)), 80.0
        )
        res = match_corners(v, c, matches, "textural", 0)
        sources = {int(p[0]) for p in res.points}
        assert 7 in sources
        assert 8 not in sources

    def test_duplicate_lidar_point_kept_once(self):
        v, c = self.build_scene()
        shared = np.array([9.0, 9.0, 9.0])
        v[1].corners[0].lidar_point = shared
        v[1].corners[1].lidar_point = shared
        res = match_corners(v, c, match_masks(v, c), "textural", 0)
        hits = [p for p in res.points if tuple(p) == (9.0, 9.0, 9.0)]
        assert len(hits) == 1

    def test_no_pixel_duplicates(self):
        v, c = self.build_scene()
        res = match_corners(v, c, match_masks(v, c), "textural", 0)
        keys = {tuple(np.round(px, 6)) for px in res.pixels}
        assert len(keys) == len(res)


class TestViewDepths:
    def test_normalization_against_hand_values(self):
        corr = CorrespondenceSet(
            np.array([[0.0, 0.0, 2.0], [0.0, 0.0, 4.0], [0.0, 0.0, 3.0]]),
            np.zeros((3, 2)),
            "textural",
            0,
        )
        out = with_view_depths(corr, Pose.identity(), 2.0, 4.0)
        np.testing.assert_allclose(out.depths, [2.0, 4.0, 3.0])
        np.testing.assert_allclose(out.norm_depths, [0.0, 1.0, 0.5])

    def test_empty_set(self):
        out = with_view_depths(CorrespondenceSet.empty("textural", 1),
                               Pose.identity(), 0.0, 1.0)
        assert len(out) == 0
        assert out.norm_depths.shape == (0,)
