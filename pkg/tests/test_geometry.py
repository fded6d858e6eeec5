import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchgrasp.geometry import (
    EvalReport,
    OrientedRect,
    angle_error,
    is_correct_grasp,
    normalize_angle,
    precision_recall_at_k,
    rect_corners,
    rotated_jaccard,
    rotated_nms,
)


def raster_jaccard(a: OrientedRect, b: OrientedRect, cells: int = 1024) -> float:
    """Rasterization oracle: point-in-rect tests on a cells x cells grid over
    the joint bounding box of both rects."""
    pts = np.vstack([rect_corners(a), rect_corners(b)])
    lo = pts.min(axis=0) - 1e-6
    hi = pts.max(axis=0) + 1e-6
    xs = np.linspace(lo[0], hi[0], cells, dtype=np.float64)
    ys = np.linspace(lo[1], hi[1], cells, dtype=np.float64)

    def mask(r: OrientedRect) -> np.ndarray:
        rad = math.radians(r.theta)
        c, s = math.cos(rad), math.sin(rad)
        # u = axis-aligned coord in the rect frame, via broadcast of row/col parts
        ax = c * (xs - r.x)
        bx = s * (ys - r.y)
        ay = -s * (xs - r.x)
        by = c * (ys - r.y)
        u = ax[None, :] + bx[:, None]
        v = ay[None, :] + by[:, None]
        return (np.abs(u) <= r.w / 2) & (np.abs(v) <= r.h / 2)

    ma, mb = mask(a), mask(b)
    union = np.logical_or(ma, mb).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(ma, mb).sum() / union)


def random_rect(rng: np.random.Generator, span: float = 40.0) -> OrientedRect:
    return OrientedRect(
        x=float(rng.uniform(-span / 4, span / 4)),
        y=float(rng.uniform(-span / 4, span / 4)),
        w=float(rng.uniform(2.0, span)),
        h=float(rng.uniform(2.0, span)),
        theta=float(rng.uniform(0.0, 360.0)),
    )


class TestOrientedRect:
    def test_theta_normalized_into_half_open_range(self):
        assert OrientedRect(0, 0, 1, 1, 0).theta == 180.0
        assert OrientedRect(0, 0, 1, 1, 180).theta == 180.0
        assert OrientedRect(0, 0, 1, 1, 190).theta == 10.0
        assert OrientedRect(0, 0, 1, 1, -30).theta == 150.0

    @pytest.mark.parametrize("w,h", [(0, 1), (1, 0), (-2, 1)])
    def test_nonpositive_extent_rejected(self, w, h):
        with pytest.raises(ValueError):
            OrientedRect(0, 0, w, h, 90)

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            OrientedRect(float("nan"), 0, 1, 1, 90)


class TestRectCorners:
    def test_axis_aligned_square_at_180(self):
        corners = rect_corners(OrientedRect(0, 0, 2, 2, 180))
        expected = {(-1, -1), (1, -1), (1, 1), (-1, 1)}
        got = {(round(x, 9), round(y, 9)) for x, y in corners}
        assert got == expected

    def test_quarter_turn_swaps_extents(self):
        corners = rect_corners(OrientedRect(0, 0, 2, 1, 90))
        got = {(round(x, 9), round(y, 9)) for x, y in corners}
        assert got == {(-0.5, -1), (0.5, -1), (0.5, 1), (-0.5, 1)}

    @given(theta=st.floats(min_value=0.1, max_value=179.9))
    def test_half_turn_invariance(self, theta):
        a = rect_corners(OrientedRect(3, -2, 4, 2, theta))
        b = rect_corners(OrientedRect(3, -2, 4, 2, theta + 180))
        sa = sorted(map(tuple, np.round(a, 9)))
        sb = sorted(map(tuple, np.round(b, 9)))
        assert np.allclose(sa, sb, atol=1e-7)


class TestRotatedJaccard:
    def test_identical_rects(self):
        r = OrientedRect(5, 5, 4, 2, 37)
        assert rotated_jaccard(r, r) == pytest.approx(1.0, abs=1e-12)

    def test_disjoint_rects(self):
        a = OrientedRect(0, 0, 2, 2, 180)
        b = OrientedRect(10, 10, 2, 2, 45)
        assert rotated_jaccard(a, b) == 0.0

    def test_offset_unit_squares(self):
        # intersection 0.5, union 1.5
        a = OrientedRect(0, 0, 1, 1, 180)
        b = OrientedRect(0.5, 0, 1, 1, 180)
        assert rotated_jaccard(a, b) == pytest.approx(1 / 3, abs=1e-12)

    def test_matches_rasterization_oracle(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(200):
            a, b = random_rect(rng), random_rect(rng)
            exact = rotated_jaccard(a, b)
            approx = raster_jaccard(a, b)
            worst = max(worst, abs(exact - approx))
        assert worst <= 0.02

    def test_symmetry_and_range(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            a, b = random_rect(rng), random_rect(rng)
            jab = rotated_jaccard(a, b)
            jba = rotated_jaccard(b, a)
            assert jab == pytest.approx(jba, abs=1e-9)
            assert 0.0 <= jab <= 1.0

    def test_rigid_motion_invariance(self):
        rng = np.random.default_rng(13)
        for _ in range(30):
            a, b = random_rect(rng), random_rect(rng)
            base = rotated_jaccard(a, b)
            dx, dy = rng.uniform(-50, 50, 2)
            rot = float(rng.uniform(0, 360))
            rad = math.radians(rot)
            c, s = math.cos(rad), math.sin(rad)

            def move(r: OrientedRect) -> OrientedRect:
                nx = c * r.x - s * r.y + dx
                ny = s * r.x + c * r.y + dy
                return OrientedRect(nx, ny, r.w, r.h, r.theta + rot)

            moved = rotated_jaccard(move(a), move(b))
            assert moved == pytest.approx(base, abs=1e-6)


class TestAngleError:
    def test_wraparound(self):
        assert angle_error(175, 5) == pytest.approx(10.0)

    def test_zero_for_equal(self):
        assert angle_error(42.5, 42.5) == 0.0

    @given(
        a=st.floats(min_value=-720, max_value=720),
        b=st.floats(min_value=-720, max_value=720),
    )
    def test_symmetric_and_bounded(self, a, b):
        e = angle_error(a, b)
        assert e == pytest.approx(angle_error(b, a), abs=1e-9)
        assert 0.0 <= e <= 90.0 + 1e-9


class TestIsCorrectGrasp:
    def test_exact_match(self):
        g = OrientedRect(10, 10, 8, 4, 45)
        assert is_correct_grasp(g, [g])

    def test_conditions_must_cohold_on_same_gt(self):
        pred = OrientedRect(0, 0, 10, 5, 90)
        overlapping_but_misaligned = OrientedRect(0, 0, 10, 5, 130)  # 40 deg off
        aligned_but_far = OrientedRect(100, 100, 10, 5, 90)
        assert not is_correct_grasp(pred, [overlapping_but_misaligned, aligned_but_far])

    def test_half_turn_of_prediction_is_equivalent(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            pred, gt = random_rect(rng), random_rect(rng)
            flipped = OrientedRect(pred.x, pred.y, pred.w, pred.h, pred.theta + 180)
            assert is_correct_grasp(pred, [gt]) == is_correct_grasp(flipped, [gt])

    def test_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(17)
        for _ in range(200):
            pred = random_rect(rng)
            gts = [random_rect(rng) for _ in range(rng.integers(1, 5))]
            expected = any(
                rotated_jaccard(pred, gt) > 0.25 and angle_error(pred.theta, gt.theta) < 30.0
                for gt in gts
            )
            assert is_correct_grasp(pred, gts) == expected

    def test_empty_gts(self):
        assert not is_correct_grasp(random_rect(np.random.default_rng(0)), [])


class TestRotatedNms:
    def test_single_rect_kept(self):
        r = OrientedRect(0, 0, 2, 2, 90)
        assert rotated_nms([r], [0.5], 0.3) == [0]

    def test_duplicates_collapse(self):
        r = OrientedRect(0, 0, 2, 2, 90)
        kept = rotated_nms([r, r, r], [0.2, 0.9, 0.5], 0.3)
        assert kept == [1]

    def test_idempotent(self):
        rng = np.random.default_rng(23)
        rects = [random_rect(rng) for _ in range(30)]
        scores = rng.uniform(0, 1, 30)
        kept = rotated_nms(rects, scores, 0.3)
        again = rotated_nms([rects[i] for i in kept], scores[kept], 0.3)
        assert [kept[i] for i in again] == kept

    def test_kept_set_has_bounded_pairwise_overlap(self):
        rng = np.random.default_rng(29)
        rects = [random_rect(rng) for _ in range(40)]
        scores = rng.uniform(0, 1, 40)
        kept = rotated_nms(rects, scores, 0.5)
        for i, a in enumerate(kept):
            for b in kept[i + 1 :]:
                assert rotated_jaccard(rects[a], rects[b]) <= 0.5

    def test_mismatched_lengths_raise(self):
        with pytest.raises(ValueError):
            rotated_nms([OrientedRect(0, 0, 1, 1, 90)], [0.1, 0.2], 0.3)


class TestPrecisionRecall:
    def test_single_query_top1_correct(self):
        g = OrientedRect(0, 0, 4, 2, 90)
        report = precision_recall_at_k([[g]], [[g]], ks=[1])
        assert report.precision[1] == 1.0
        assert report.recall[1] == 1.0

    def test_partial_topk(self):
        g = OrientedRect(0, 0, 4, 2, 90)
        wrong = OrientedRect(50, 50, 4, 2, 90)
        report = precision_recall_at_k([[g, wrong, wrong]], [[g]], ks=[3])
        assert report.precision[3] == pytest.approx(1 / 3)
        assert report.recall[3] == 1.0

    def test_empty_predictions_count_zero(self):
        g = OrientedRect(0, 0, 4, 2, 90)
        report = precision_recall_at_k([[]], [[g]], ks=[1, 5])
        assert report.precision[1] == 0.0
        assert report.recall[5] == 0.0

    def test_zero_queries_rejected(self):
        with pytest.raises(ValueError):
            precision_recall_at_k([], [], ks=[1])

    def test_recall_monotone_in_k(self):
        rng = np.random.default_rng(31)
        preds, gts = [], []
        for _ in range(40):
            gts.append([random_rect(rng) for _ in range(2)])
            preds.append([random_rect(rng) for _ in range(10)])
        ks = [1, 3, 5, 10]
        report = precision_recall_at_k(preds, gts, ks=ks)
        rec = [report.recall[k] for k in ks]
        assert all(b >= a for a, b in zip(rec, rec[1:]))

    def test_matches_independent_scorer(self):
        rng = np.random.default_rng(37)
        ks = [1, 3, 5]
        preds, gts = [], []
        for _ in range(50):
            gts.append([random_rect(rng) for _ in range(rng.integers(1, 4))])
            n = int(rng.integers(0, 8))
            preds.append([random_rect(rng) for _ in range(n)])
        report = precision_recall_at_k(preds, gts, ks=ks)

        # second, independently scripted recomputation
        for k in ks:
            p_sum, r_sum = 0.0, 0.0
            for pred_list, gt_list in zip(preds, gts):
                top = pred_list[:k]
                hits = 0
                for p in top:
                    ok = False
                    for g in gt_list:
                        if rotated_jaccard(p, g) > 0.25 and angle_error(p.theta, g.theta) < 30:
                            ok = True
                            break
                    hits += int(ok)
                if top:
                    p_sum += hits / min(k, len(top))
                    r_sum += 1.0 if hits > 0 else 0.0
            assert report.precision[k] == pytest.approx(p_sum / 50, abs=1e-12)
            assert report.recall[k] == pytest.approx(r_sum / 50, abs=1e-12)

    def test_per_category_breakdown_and_serialization(self):
        g = OrientedRect(0, 0, 4, 2, 90)
        wrong = OrientedRect(50, 50, 4, 2, 90)
        report = precision_recall_at_k(
            [[g], [wrong]], [[g], [g]], ks=[1], categories=["apple", "banana"]
        )
        assert report.per_category["apple"]["precision"][1] == 1.0
        assert report.per_category["banana"]["precision"][1] == 0.0
        doc = report.to_json()
        assert '"apple"' in doc
        table = report.to_table()
        assert "R@1" in table and "P@1" in table and "overall" in table


class TestNormalizeAngle:
    @given(theta=st.floats(min_value=-1e4, max_value=1e4))
    def test_range(self, theta):
        t = normalize_angle(theta)
        assert 0.0 < t <= 180.0

    def test_period(self):
        assert normalize_angle(10.0) == normalize_angle(190.0) == normalize_angle(-170.0)
