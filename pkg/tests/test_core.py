import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from herdpipe.core import (
    AnnotatedImage,
    BBox,
    ClassSet,
    Detection,
    GroundTruthBox,
    MaskAnnotation,
    box_mask_rle,
    clip_to_image,
    decode_rle,
    encode_rle,
    iou,
    match_detections,
)
from herdpipe.errors import ConfigError, EmptyClipError, GeometryError


def boxes(max_coord=100):
    coords = st.integers(min_value=0, max_value=max_coord)
    return st.builds(
        lambda x0, y0, dx, dy: BBox(x0, y0, x0 + dx, y0 + dy),
        coords,
        coords,
        st.integers(min_value=0, max_value=max_coord),
        st.integers(min_value=0, max_value=max_coord),
    )


class TestBBox:
    def test_rejects_inverted(self):
        with pytest.raises(GeometryError):
            BBox(10, 0, 5, 10)

    def test_rejects_nan(self):
        with pytest.raises(GeometryError):
            BBox(0, float("nan"), 1, 1)

    def test_degenerate_is_legal(self):
        b = BBox(5, 5, 5, 5)
        assert b.area == 0


class TestIoU:
    def test_identity(self):
        b = BBox(0, 0, 10, 10)
        assert iou(b, b) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        # intersection 50, union 150
        assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_degenerate_pair(self):
        d = BBox(3, 3, 3, 3)
        assert iou(d, d) == 0.0
        assert iou(d, BBox(0, 0, 10, 10)) == 0.0

    @given(boxes(), boxes())
    def test_symmetric(self, a, b):
        assert iou(a, b) == iou(b, a)

    @given(boxes(), boxes())
    def test_bounded(self, a, b):
        assert 0.0 <= iou(a, b) <= 1.0

    @given(boxes())
    def test_self_iou_is_one_for_positive_area(self, b):
        if b.area > 0:
            assert iou(b, b) == 1.0


class TestClip:
    def test_clamp_at_origin(self):
        assert clip_to_image(BBox(-5, -5, 10, 10), 100, 100) == BBox(0, 0, 10, 10)

    def test_inside_unchanged(self):
        assert clip_to_image(BBox(0, 0, 10, 10), 100, 100) == BBox(0, 0, 10, 10)

    def test_fully_outside_errors(self):
        with pytest.raises(EmptyClipError):
            clip_to_image(BBox(200, 200, 300, 300), 100, 100)

    def test_bad_dimensions(self):
        with pytest.raises(ConfigError):
            clip_to_image(BBox(0, 0, 1, 1), 0, 10)


class TestClassSet:
    def test_ids_in_order(self):
        cs = ClassSet(["camel", "rope", "mask", "pole"])
        assert cs.id_of("rope") == 1
        assert cs.name_of(3) == "pole"
        assert len(cs) == 4

    def test_rejects_duplicates(self):
        with pytest.raises(ConfigError):
            ClassSet(["a", "a"])

    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            ClassSet([])

    def test_unknown_name(self):
        with pytest.raises(ConfigError):
            ClassSet(["a"]).id_of("b")


class TestDetectionTypes:
    def test_confidence_range(self):
        with pytest.raises(GeometryError):
            Detection(BBox(0, 0, 1, 1), 0, 1.5)

    def test_annotated_image_rejects_out_of_bounds(self):
        gt = GroundTruthBox(BBox(0, 0, 200, 10), 0)
        with pytest.raises(GeometryError):
            AnnotatedImage("img", 100, 100, (gt,))

    def test_mask_rle_total(self):
        with pytest.raises(GeometryError):
            MaskAnnotation(class_id=0, width=4, height=4, rle=(3, 2))

    def test_mask_polygon_bounds(self):
        with pytest.raises(GeometryError):
            MaskAnnotation(class_id=0, width=4, height=4, polygon=((0, 0), (5, 0), (2, 2)))

    def test_mask_dims_must_match_image(self):
        m = MaskAnnotation(class_id=0, width=8, height=8, rle=(64,))
        with pytest.raises(GeometryError):
            AnnotatedImage("img", 100, 100, (), (m,))


class TestRle:
    def test_round_trip(self):
        flat = [False, True, True, False, False, True, False, False]
        m = encode_rle(flat, 4, 2, class_id=0)
        assert decode_rle(m) == flat
        assert sum(m.rle) == 8

    def test_starts_on(self):
        m = encode_rle([True, False], 2, 1, class_id=0)
        assert m.rle == (0, 1, 1)

    def test_box_mask(self):
        m = box_mask_rle(BBox(1, 1, 3, 2), width=4, height=3, class_id=2)
        grid = decode_rle(m)
        assert grid == [
            False, False, False, False,
            False, True, True, False,
            False, False, False, False,
        ]


def det(x0, y0, x1, y1, cls=0, conf=1.0):
    return Detection(BBox(x0, y0, x1, y1), cls, conf)


def gt(x0, y0, x1, y1, cls=0):
    return GroundTruthBox(BBox(x0, y0, x1, y1), cls)


class TestMatching:
    def test_perfect_match(self):
        res = match_detections([det(0, 0, 10, 10)], [gt(0, 0, 10, 10)], 0.5, class_id=0)
        assert (res.num_tp, res.num_fp, res.num_fn) == (1, 0, 0)

    def test_double_detection(self):
        dets = [det(0, 0, 10, 10, conf=0.8), det(0, 0, 10, 10, conf=0.9)]
        res = match_detections(dets, [gt(0, 0, 10, 10)], 0.5, class_id=0)
        # higher-confidence detection (index 1) wins the ground truth
        assert res.detection_matches == (None, 0)
        assert (res.num_tp, res.num_fp, res.num_fn) == (1, 1, 0)

    def test_empty_predictions(self):
        res = match_detections([], [gt(0, 0, 1, 1), gt(2, 2, 3, 3), gt(4, 4, 5, 5)], 0.5, class_id=0)
        assert (res.num_tp, res.num_fp, res.num_fn) == (0, 0, 3)

    def test_class_restriction(self):
        res = match_detections([det(0, 0, 10, 10, cls=1)], [gt(0, 0, 10, 10, cls=0)], 0.5, class_id=0)
        assert (res.num_tp, res.num_fp, res.num_fn) == (0, 0, 1)

    def test_class_agnostic(self):
        res = match_detections([det(0, 0, 10, 10, cls=1)], [gt(0, 0, 10, 10, cls=0)], 0.5, class_id=None)
        assert res.num_tp == 1

    def test_invalid_threshold(self):
        with pytest.raises(ConfigError):
            match_detections([], [], 0.0, class_id=0)
        with pytest.raises(ConfigError):
            match_detections([], [], 1.5, class_id=0)

    def test_confidence_tie_breaks_by_index(self):
        dets = [det(0, 0, 10, 10, conf=0.5), det(0, 0, 10, 10, conf=0.5)]
        res = match_detections(dets, [gt(0, 0, 10, 10)], 0.5, class_id=0)
        assert res.detection_matches == (0, None)


def instances(max_boxes=6):
    coords = st.integers(min_value=0, max_value=30)
    confs = st.sampled_from([0.1, 0.25, 0.5, 0.75, 0.9, 1.0])
    det_s = st.builds(
        lambda x0, y0, dx, dy, c: det(x0, y0, x0 + dx, y0 + dy, conf=c),
        coords, coords, st.integers(1, 20), st.integers(1, 20), confs,
    )
    gt_s = st.builds(
        lambda x0, y0, dx, dy: gt(x0, y0, x0 + dx, y0 + dy),
        coords, coords, st.integers(1, 20), st.integers(1, 20),
    )
    return st.tuples(
        st.lists(det_s, max_size=max_boxes),
        st.lists(gt_s, max_size=max_boxes),
    )


class TestMatchingProperties:
    @given(instances())
    def test_count_identities(self, inst):
        dets, gts = inst
        res = match_detections(dets, gts, 0.5, class_id=0)
        assert res.num_tp + res.num_fn == len(gts)
        assert res.num_tp + res.num_fp == len(dets)

    @given(instances(), st.sampled_from([(0.3, 0.5), (0.5, 0.75), (0.25, 0.9)]))
    def test_threshold_monotonicity(self, inst, thresholds):
        dets, gts = inst
        lo, hi = thresholds
        tp_lo = match_detections(dets, gts, lo, class_id=0).num_tp
        tp_hi = match_detections(dets, gts, hi, class_id=0).num_tp
        assert tp_hi <= tp_lo

    @given(instances())
    @settings(max_examples=200)
    def test_agrees_with_independent_greedy(self, inst):
        from bruteforce import greedy_match_counts

        dets, gts = inst
        res = match_detections(dets, gts, 0.5, class_id=0)
        plain_dets = [(d.bbox.as_xyxy(), d.class_id, d.confidence) for d in dets]
        plain_gts = [(g.bbox.as_xyxy(), g.class_id) for g in gts]
        tp, fp, fn = greedy_match_counts(plain_dets, plain_gts, 0.5, class_id=0)
        assert (res.num_tp, res.num_fp, res.num_fn) == (tp, fp, fn)
