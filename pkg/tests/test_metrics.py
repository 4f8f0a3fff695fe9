import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from sealread.corpus import BBox
from sealread.infer.types import ClassScores, Detection
from sealread.metrics import (
    COCO_THRESHOLDS,
    MetricError,
    average_precision,
    cer,
    confusion_and_f1,
    dataset_average_precision,
    fold_cer,
    iou,
    levenshtein,
    map_range,
    match_detections,
    overall_cer,
    precision_recall,
    topk_accuracy,
)

from oracles import (
    ap_oracle,
    edit_oracle,
    exhaustive_assignment,
    greedy_oracle,
    iou_oracle,
    plain_distance,
    random_box,
    random_instance,
    random_string,
    separated_instance,
)

boxes = st.builds(
    lambda cx, cy, w, h: BBox(cx, cy, w, h),
    st.floats(0.05, 0.95), st.floats(0.05, 0.95), st.floats(0.01, 0.5), st.floats(0.01, 0.5),
)


# --- IoU -------------------------------------------------------------------


def test_iou_basic_cases():
    a = BBox(0.5, 0.5, 0.2, 0.2)
    assert iou(a, a) == 1.0
    assert iou(a, BBox(0.1, 0.1, 0.1, 0.1)) == 0.0
    # unit squares offset by half a side in x and y
    b = BBox(0.6, 0.6, 0.2, 0.2)
    assert iou(a, b) == pytest.approx(1 / 7, abs=1e-12)


@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert 0.0 <= v <= 1.0
    assert v == pytest.approx(iou(b, a), abs=1e-15)
    assert iou(a, a) == 1.0


def test_iou_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a, b = random_box(rng), random_box(rng)
        assert abs(iou(a, b) - iou_oracle(a, b)) <= 1e-9


# --- matching --------------------------------------------------------------


def det(cx, cy, w, h, conf):
    return Detection(BBox(cx, cy, w, h), conf)


def test_match_exact():
    g = BBox(0.5, 0.5, 0.1, 0.1)
    m = match_detections([Detection(g, 0.9)], [g], 0.5)
    assert m.tp == 1 and m.unmatched_preds == [] and m.unmatched_gts == []


def test_match_two_preds_one_gt():
    g = BBox(0.5, 0.5, 0.1, 0.1)
    m = match_detections([Detection(g, 0.8), Detection(g, 0.9)], [g], 0.5)
    assert [(p, q) for p, q, _ in m.pairs] == [(1, 0)]
    assert m.unmatched_preds == [0]


def test_match_threshold_inclusive():
    # IoU exactly 0.6: the half-overlapping boxes below share 0.375 of a 0.625 union
    g = BBox(0.5, 0.5, 0.5, 0.5)
    p = BBox(0.625, 0.5, 0.5, 0.5)
    assert iou(g, p) == pytest.approx(0.6, abs=1e-15)
    assert match_detections([Detection(p, 0.5)], [g], iou(g, p)).tp == 1


def test_match_tie_prefers_lower_gt_index():
    p = BBox(0.5, 0.5, 0.2, 0.2)
    g0, g1 = BBox(0.45, 0.5, 0.2, 0.2), BBox(0.55, 0.5, 0.2, 0.2)
    m = match_detections([Detection(p, 0.5)], [g0, g1], 0.3)
    assert m.pairs[0][1] == 0


def test_matching_agrees_with_greedy_oracle():
    rng = np.random.default_rng(1)
    for _ in range(150):
        preds, gts = random_instance(rng)
        m = match_detections(preds, gts, 0.5)
        assert sorted((p, g) for p, g, _ in m.pairs) == greedy_oracle(preds, gts, 0.5)
        used_p = [p for p, _, _ in m.pairs] + m.unmatched_preds
        used_g = [g for _, g, _ in m.pairs] + m.unmatched_gts
        assert sorted(used_p) == list(range(len(preds)))
        assert sorted(used_g) == list(range(len(gts)))


def test_matching_equals_exhaustive_on_separated_grids():
    rng = np.random.default_rng(2)
    for _ in range(120):
        preds, gts = separated_instance(rng, int(rng.integers(1, 5)))
        m = match_detections(preds, gts, 0.5)
        assert sorted((p, g) for p, g, _ in m.pairs) == exhaustive_assignment(preds, gts, 0.5)


def test_greedy_can_differ_from_optimal():
    # the documented difference: a confident pred grabs the gt another pred needed
    g0, g1 = BBox(0.3, 0.5, 0.2, 0.2), BBox(0.42, 0.5, 0.2, 0.2)
    p0 = Detection(BBox(0.37, 0.5, 0.2, 0.2), 0.9)
    p1 = Detection(BBox(0.3, 0.5, 0.2, 0.2), 0.5)
    greedy = match_detections([p0, p1], [g0, g1], 0.5)
    assert greedy.tp <= len(exhaustive_assignment([p0, p1], [g0, g1], 0.5))


# --- AP --------------------------------------------------------------------


def test_ap_perfect_and_zero():
    gts = [BBox(0.2, 0.2, 0.1, 0.1), BBox(0.7, 0.7, 0.1, 0.1)]
    assert average_precision([Detection(g, 0.9) for g in gts], gts, 0.5) == 1.0
    assert average_precision([det(0.5, 0.5, 0.05, 0.05, 0.9)], gts, 0.5) == 0.0
    assert average_precision([], gts, 0.5) == 0.0


def test_ap_tp_fp_tp():
    gts = [BBox(0.2, 0.2, 0.1, 0.1), BBox(0.7, 0.7, 0.1, 0.1)]
    preds = [Detection(gts[0], 0.9), det(0.45, 0.45, 0.1, 0.1, 0.8), Detection(gts[1], 0.7)]
    ap = average_precision(preds, gts, 0.5)
    assert round(ap, 4) == 0.8333
    assert ap == pytest.approx(1 * 0.5 + (2 / 3) * 0.5)
    assert ap == pytest.approx(ap_oracle(preds, gts, 0.5), abs=1e-9)


def test_ap_without_gts_is_an_error():
    with pytest.raises(MetricError):
        average_precision([det(0.5, 0.5, 0.1, 0.1, 0.5)], [], 0.5)


def test_map_range_iou_point_six():
    g = BBox(0.5, 0.5, 0.5, 0.5)
    p = Detection(BBox(0.625, 0.5, 0.5, 0.5), 0.9)
    map50, map5095 = map_range([p], [g])
    assert map50 == 1.0
    assert map5095 == pytest.approx(3 / 10)
    assert COCO_THRESHOLDS == (0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def test_map_range_perfect():
    gts = [BBox(0.3, 0.3, 0.1, 0.1)]
    assert map_range([Detection(gts[0], 0.4)], gts) == (1.0, 1.0)


def test_ap_agrees_with_oracle():
    rng = np.random.default_rng(3)
    for _ in range(150):
        preds, gts = random_instance(rng)
        for thr in (0.5, 0.75):
            assert abs(average_precision(preds, gts, thr) - ap_oracle(preds, gts, thr)) <= 1e-9


def test_ap_monotone_under_extra_predictions():
    rng = np.random.default_rng(4)
    for _ in range(100):
        preds, gts = random_instance(rng)
        base = average_precision(preds, gts, 0.5)
        low_fp = Detection(BBox(0.99, 0.99, 0.01, 0.01), 0.001)
        assert average_precision(preds + [low_fp], gts, 0.5) <= base + 1e-12
        extra_gt = BBox(0.985, 0.015, 0.02, 0.02)
        if all(iou(extra_gt, g) == 0 for g in gts) and all(iou(extra_gt, p.bbox) == 0 for p in preds):
            with_gt = average_precision(preds, gts + [extra_gt], 0.5)
            with_tp = average_precision(preds + [Detection(extra_gt, 0.999)], gts + [extra_gt], 0.5)
            assert with_tp >= with_gt - 1e-12


def test_dataset_ap_pools_images():
    g1, g2 = BBox(0.2, 0.2, 0.1, 0.1), BBox(0.7, 0.7, 0.1, 0.1)
    images = [([Detection(g1, 0.9)], [g1]), ([det(0.4, 0.4, 0.1, 0.1, 0.8), Detection(g2, 0.7)], [g2])]
    assert dataset_average_precision(images, 0.5) == pytest.approx(0.8333333333)


def test_precision_recall_counts():
    g = [BBox(0.2, 0.2, 0.1, 0.1), BBox(0.7, 0.7, 0.1, 0.1)]
    images = [([Detection(g[0], 0.9), det(0.5, 0.5, 0.1, 0.1, 0.3)], g)]
    assert precision_recall(images, 0.5) == (0.5, 0.5)
    assert precision_recall(images, 0.5, min_confidence=0.5) == (1.0, 0.5)
    assert precision_recall([([], g)], 0.5) == (0.0, 0.0)


# --- classification --------------------------------------------------------


CLASSES = ("A", "B", "C")


def scores(*v):
    return ClassScores(CLASSES, v)


def test_topk_second_rank():
    s = [scores(0.2, 0.7, 0.1), scores(0.1, 0.2, 0.7)]
    labels = [0, 1]
    assert topk_accuracy(s, labels, 1) == 0.0
    assert topk_accuracy(s, labels, 2) == 1.0


def test_topk_one_hot():
    s = [ClassScores.one_hot(CLASSES, c) for c in CLASSES]
    for k in (1, 2, 3):
        assert topk_accuracy(s, [0, 1, 2], k) == 1.0


def test_topk_ties_go_to_lower_id():
    s = [scores(0.4, 0.4, 0.2)]
    assert topk_accuracy(s, [0], 1) == 1.0
    assert topk_accuracy(s, [1], 1) == 0.0


def test_topk_empty():
    with pytest.raises(MetricError):
        topk_accuracy([], [], 1)


def test_confusion_perfect():
    s = [ClassScores.one_hot(CLASSES, c) for c in CLASSES * 2]
    summary = confusion_and_f1(s, [0, 1, 2, 0, 1, 2], CLASSES)
    assert np.array_equal(summary.confusion.counts, 2 * np.eye(3, dtype=int))
    assert summary.macro_f1 == 1.0
    assert summary.per_class_mean_acc == 1.0


def test_confusion_one_class_always_wrong():
    s = [ClassScores(("A", "B"), (0.0, 1.0))] * 4
    summary = confusion_and_f1(s, [0, 0, 1, 1], ("A", "B"))
    assert summary.per_class_f1["A"] == 0.0
    assert summary.per_class_f1["B"] == pytest.approx(2 / 3)
    assert summary.per_class_mean_acc == 0.5
    assert summary.confusion.total == 4


def test_confusion_excludes_unsupported_classes():
    s = [scores(1, 0, 0), scores(0, 1, 0)]
    summary = confusion_and_f1(s, [0, 1], CLASSES)
    assert summary.excluded_classes == ["C"]
    assert summary.macro_f1 == 1.0
    csv = summary.confusion.to_csv().splitlines()
    assert csv[0] == "true\\pred,A,B,C"
    assert csv[1] == "A,1,0,0"


# --- edit distance ---------------------------------------------------------


def test_levenshtein_identity():
    e = levenshtein(list("ΣΟΦ"), list("ΣΟΦ"))
    assert (e.S, e.D, e.I, e.N) == (0, 0, 0, 3)


def test_levenshtein_two_insertions():
    e = levenshtein(list("ΣΟΦ"), list("ΣΟΦΗΑ"))
    assert (e.S, e.D, e.I) == (0, 0, 2)


def test_levenshtein_empty_prediction():
    e = levenshtein([], list("ΑΒΓ"))
    assert (e.S, e.D, e.I) == (0, 0, 3)


def test_cer_one_deletion():
    e = levenshtein(list("ΑΒΓΔ"), list("ΑΓΔ"))
    assert (e.S, e.D, e.I) == (0, 1, 0)
    assert cer(list("ΑΒΓΔ"), list("ΑΓΔ")) == pytest.approx(1 / 3)


def test_cer_can_exceed_one():
    assert cer(list("ΑΑΑΑ"), list("Β")) == 4.0


def test_cer_empty_gt():
    with pytest.raises(MetricError):
        cer(["Α"], [])


def test_substitution_preferred_over_indel_pair():
    e = levenshtein(["A"], ["B"])
    assert (e.S, e.D, e.I) == (1, 0, 0)


def test_levenshtein_agrees_with_oracles():
    rng = np.random.default_rng(5)
    for _ in range(300):
        a, b = random_string(rng), random_string(rng)
        e = levenshtein(a, b)
        assert e.distance == plain_distance(a, b)
        assert (e.S, e.D, e.I) == edit_oracle(a, b)
        assert e.D <= len(a) and e.N == len(b)


@settings(max_examples=200)
@given(st.lists(st.sampled_from("ΑΒΓ"), max_size=10), st.lists(st.sampled_from("ΑΒΓ"), max_size=10))
def test_levenshtein_swap_symmetry(a, b):
    ab, ba = levenshtein(a, b), levenshtein(b, a)
    assert ab.distance == ba.distance
    assert (ab.S, ab.D, ab.I) == (ba.S, ba.I, ba.D)


# --- aggregation -----------------------------------------------------------


PUBLISHED_FOLD_CERS = [0.32, 0.27, 0.30, 0.33, 0.29, 0.29, 0.34, 0.25, 0.24, 0.39]


def test_fold_and_overall_means():
    assert fold_cer([0.0, 0.5, 1.0]) == 0.5
    assert overall_cer([0.2, 0.4]) == pytest.approx(0.3)
    with pytest.raises(MetricError):
        fold_cer([])


def test_published_fold_cers_mean():
    # ten reference fold CERs average to 0.302
    assert overall_cer(PUBLISHED_FOLD_CERS) == pytest.approx(0.302, abs=1e-12)


def test_fold_mean_differs_from_seal_mean():
    fold_a, fold_b = [0.0], [1.0, 1.0, 1.0]
    assert overall_cer([fold_cer(fold_a), fold_cer(fold_b)]) == 0.5
    assert np.mean(fold_a + fold_b) == 0.75
