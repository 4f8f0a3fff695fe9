import json
import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sealread.alphabet import NON_CHARACTER
from sealread.corpus import (
    BBox,
    CharBox,
    CorpusManifest,
    FoldError,
    FoldPlan,
    LeakageError,
    ManifestError,
    SealAnnotation,
    augment_training,
    check_no_leakage,
    crop_region,
    decode_png,
    encode_png,
    extract_crops,
    fold_split,
    load_manifest,
    make_folds,
    manifest_from_dict,
    manifest_to_dict,
    mean_char_size,
    sample_noncharacters,
    save_manifest,
)
from sealread.metrics import iou


def seal(seal_id, chars=(), side="reverse", size=400, gt=None):
    return SealAnnotation(seal_id, "test", side, f"images/{seal_id}.png", size, size, tuple(chars), gt)


def manifest_of(ids, side="reverse"):
    return CorpusManifest("sealread-alphabet/1", tuple(seal(i, side=side) for i in ids), {})


def two_seal_doc():
    return {
        "format": "sealread-manifest",
        "registry_version": "sealread-alphabet/1",
        "provenance": {},
        "seals": [
            {
                "seal_id": "a", "collection": "zacos", "side": "reverse", "image_path": "a.png",
                "image_w": 1000, "image_h": 1000,
                "chars": [
                    {"bbox": [0.3, 0.4, 0.05, 0.06], "class_name": "ALPHA", "line_hint": 0},
                    {"bbox": [0.4, 0.4, 0.05, 0.06], "class_name": "OMEGA", "line_hint": 0},
                ],
                "transcription_gt": [["ALPHA", "OMEGA"]],
            },
            {
                "seal_id": "b", "collection": "tatish", "side": "obverse", "image_path": "b.png",
                "image_w": 1000, "image_h": 1000, "chars": [],
            },
        ],
    }


# --- boxes -----------------------------------------------------------------


def test_bbox_validation():
    with pytest.raises(ValueError):
        BBox(1.2, 0.5, 0.1, 0.1)
    with pytest.raises(ValueError):
        BBox(0.5, 0.5, 0.0, 0.1)
    with pytest.raises(ValueError):
        BBox(0.5, 0.5, float("nan"), 0.1)


def test_bbox_pixels_clip():
    b = BBox(0.02, 0.5, 0.1, 0.1)
    assert b.to_pixels(100, 100) == (0, 45, 7, 55)
    assert BBox.from_pixels(10, 20, 30, 60, 100, 100).as_tuple() == pytest.approx((0.2, 0.4, 0.2, 0.4))


# --- manifest --------------------------------------------------------------


def test_manifest_round_trip(tmp_path):
    m = manifest_from_dict(two_seal_doc())
    assert len(m) == 2
    path = save_manifest(m, tmp_path)
    again = load_manifest(path)
    assert again.seals == m.seals
    assert manifest_to_dict(again) == manifest_to_dict(m)


def test_manifest_boxes_keep_precision(tmp_path):
    doc = two_seal_doc()
    doc["seals"][0]["chars"][0]["bbox"] = [0.123456789, 0.4, 0.05, 0.06]
    m = manifest_from_dict(doc)
    save_manifest(m, tmp_path)
    raw = json.loads((tmp_path / "manifest.json").read_text())
    assert raw["seals"][0]["chars"][0]["bbox"][0] == 0.123456789


def test_unknown_class_names_seal_and_index():
    doc = two_seal_doc()
    doc["seals"][0]["chars"][1]["class_name"] = "OMEGA_TYPO"
    with pytest.raises(ManifestError) as err:
        manifest_from_dict(doc)
    assert err.value.seal_id == "a"
    assert err.value.path == "chars[1].class_name"
    assert "OMEGA_TYPO" in str(err.value)


def test_transcription_multiset_mismatch():
    doc = two_seal_doc()
    doc["seals"][0]["transcription_gt"] = [["ALPHA"]]
    with pytest.raises(ManifestError, match="same characters"):
        manifest_from_dict(doc)


def test_duplicate_seal_id():
    doc = two_seal_doc()
    doc["seals"][1]["seal_id"] = "a"
    with pytest.raises(ManifestError, match="duplicate"):
        manifest_from_dict(doc)


@pytest.mark.parametrize("field,value", [("side", "edge"), ("image_w", 0), ("image_h", "big"), ("chars", {})])
def test_schema_violations(field, value):
    doc = two_seal_doc()
    doc["seals"][0][field] = value
    with pytest.raises(ManifestError):
        manifest_from_dict(doc)


def test_bad_bbox_reports_path():
    doc = two_seal_doc()
    doc["seals"][0]["chars"][0]["bbox"] = [0.5, 0.5, 0.1]
    with pytest.raises(ManifestError) as err:
        manifest_from_dict(doc)
    assert err.value.path == "chars[0].bbox"


def test_png_round_trip():
    img = (np.arange(64 * 48) % 251).astype(np.uint8).reshape(48, 64)
    assert np.array_equal(decode_png(encode_png(img)), img)


# --- folds -----------------------------------------------------------------


def test_folds_66_reverse_seals():
    m = manifest_of([f"s{i:02d}" for i in range(66)])
    plan = make_folds(m, 10, 42)
    sizes = [len(f) for f in plan.folds]
    assert sorted(sizes) == [6] * 4 + [7] * 6
    assert sizes[:6] == [7] * 6


def test_folds_singletons():
    plan = make_folds(manifest_of([f"s{i}" for i in range(10)]), 10, 1)
    assert all(len(f) == 1 for f in plan.folds)


def test_folds_deterministic_and_order_free():
    ids = [f"s{i:02d}" for i in range(23)]
    a = make_folds(manifest_of(ids), 4, 9)
    b = make_folds(manifest_of(ids), 4, 9)
    c = make_folds(manifest_of(list(reversed(ids))), 4, 9)
    assert a == b == c
    assert make_folds(manifest_of(ids), 4, 10) != a


def test_folds_side_filter():
    m = CorpusManifest("v", tuple(seal(f"r{i}") for i in range(5)) + tuple(seal(f"o{i}", side="obverse") for i in range(5)), {})
    plan = make_folds(m, 5, 0)
    assert sorted(plan.seal_ids) == [f"r{i}" for i in range(5)]
    assert len(make_folds(m, 5, 0, side_filter=None).seal_ids) == 10


def test_too_few_seals():
    with pytest.raises(FoldError):
        make_folds(manifest_of(["a", "b"]), 3, 0)


def test_fold_plan_round_trip():
    plan = make_folds(manifest_of([f"s{i}" for i in range(7)]), 3, 5)
    assert FoldPlan.from_dict(json.loads(json.dumps(plan.to_dict()))) == plan


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(2, 10), st.integers(0, 2**63 - 1))
def test_fold_partition_property(n, k, seed):
    if n < k:
        return
    ids = [f"s{i}" for i in range(n)]
    m = manifest_of(ids)
    plan = make_folds(m, k, seed)
    flat = plan.seal_ids
    assert sorted(flat) == sorted(ids)
    sizes = [len(f) for f in plan.folds]
    assert max(sizes) - min(sizes) <= 1
    for t in range(k):
        train, test = fold_split(plan, t, m)
        tr, te = {s.seal_id for s in train}, {s.seal_id for s in test}
        assert not tr & te
        assert tr | te == set(ids)


def test_fold_split_index_range():
    m = manifest_of([f"s{i}" for i in range(6)])
    plan = make_folds(m, 3, 0)
    with pytest.raises(FoldError):
        fold_split(plan, 3, m)
    train, test = fold_split(plan, 0, m)
    assert len(train) == 4 and len(test) == 2


def test_augment_rejects_test_seal():
    m = manifest_of([f"s{i}" for i in range(6)])
    plan = make_folds(m, 3, 0)
    train, test = fold_split(plan, 0, m)
    extra = [seal("o1", side="obverse")]
    assert len(augment_training(train, extra, test)) == len(train) + 1
    with pytest.raises(LeakageError):
        augment_training(train, extra + [test[0]], test)


def test_leakage_guard():
    check_no_leakage(["a", "b"], ["c"])
    with pytest.raises(LeakageError):
        check_no_leakage(["a", "b"], ["b"])


# --- crops -----------------------------------------------------------------


def grid_seal(n=12, size=400):
    chars = [CharBox(BBox(0.2 + 0.05 * (i % 6), 0.4 + 0.1 * (i // 6), 0.04, 0.06), "ALPHA") for i in range(n)]
    return seal("g", chars, size=size)


def test_extract_crops_count_and_size():
    s = grid_seal()
    img = np.zeros((400, 400), np.uint8)
    crops = extract_crops(s, img, 0.1, 256)
    assert len(crops) == 12
    assert all(c.shape == (256, 256) and name == "ALPHA" for c, name in crops)


def test_crop_pad_zero_at_edge_equals_box():
    img = np.arange(100 * 100, dtype=np.uint32).reshape(100, 100) % 256
    img = img.astype(np.uint8)
    box = BBox.from_pixels(0, 0, 20, 20, 100, 100)
    s = seal("e", [CharBox(box, "ALPHA")], size=100)
    (crop, _), = extract_crops(s, img, 0.0, 20)
    assert np.array_equal(crop, img[:20, :20])


def test_crop_padding_arithmetic():
    # a centred 100 px box padded by 0.25 * 100 on each side spans 150 px
    box = BBox(0.5, 0.5, 0.25, 0.25)
    x0, y0, x1, y1 = crop_region(box, 400, 400, 0.25)
    assert (x1 - x0, y1 - y0) == (150, 150)
    assert (x0, y0) == (125, 125)


def test_degenerate_crop_is_skipped(caplog):
    # a box whose padded region rounds to nothing inside the image
    s = seal("d", [CharBox(BBox(1.0, 1.0, 0.001, 0.001), "ALPHA"), CharBox(BBox(0.5, 0.5, 0.1, 0.1), "ALPHA")], size=100)
    skipped = []
    with caplog.at_level(logging.WARNING):
        crops = extract_crops(s, np.zeros((100, 100), np.uint8), 0.0, 32, skipped=skipped)
    assert len(crops) == 1
    assert [k.index for k in skipped] == [0]


def test_crop_dimension_mismatch():
    with pytest.raises(ValueError):
        extract_crops(grid_seal(), np.zeros((300, 400), np.uint8))


# --- non-characters --------------------------------------------------------


def test_noncharacter_boxes_have_mean_size():
    chars = [CharBox(BBox(0.3, 0.5, 0.06, 0.08), "ALPHA"), CharBox(BBox(0.6, 0.5, 0.10, 0.12), "TAU")]
    s = seal("n", chars)
    assert mean_char_size(s) == pytest.approx((0.08, 0.10))
    boxes = sample_noncharacters(s, 40, 3)
    assert len(boxes) == 40
    for b in boxes:
        assert b.class_name == NON_CHARACTER
        assert (b.bbox.w, b.bbox.h) == pytest.approx((0.08, 0.10))
        assert (b.bbox.cx - 0.5) ** 2 + (b.bbox.cy - 0.5) ** 2 <= 0.25 + 1e-12
        assert max(iou(b.bbox, c.bbox) for c in chars) < 0.10


def test_noncharacters_zero_and_deterministic():
    s = grid_seal()
    assert sample_noncharacters(s, 0, 1) == []
    assert sample_noncharacters(s, 25, 7) == sample_noncharacters(s, 25, 7)
    assert sample_noncharacters(s, 25, 7) != sample_noncharacters(s, 25, 8)


def test_noncharacters_exhaustion_returns_fewer(caplog):
    # one huge character covering the whole disc leaves no room
    s = seal("full", [CharBox(BBox(0.5, 0.5, 1.0, 1.0), "ALPHA")])
    with caplog.at_level(logging.WARNING):
        out = sample_noncharacters(s, 3, 0)
    assert out == []
    assert "placed 0 of 3" in caplog.text


def test_noncharacters_need_characters():
    with pytest.raises(ValueError):
        sample_noncharacters(seal("empty"), 5, 0)
