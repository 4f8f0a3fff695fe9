import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sealread.alphabet import NON_CHARACTER
from sealread.corpus import BBox
from sealread.infer.types import ClassScores, Detection, LabeledDetection
from sealread.lineify import (
    HoughParams,
    TextLine,
    Transcription,
    brute_force_lines,
    extract_lines,
    reading_order,
    transcribe,
)
from sealread.metrics import levenshtein
from sealread.synthseal import CorpusConfig, SealSpec, generate_corpus, generate_seal

H = 0.05  # box height used by the hand-built fixtures


def row_boxes(rows, per_row, spacing=3.0, angle_deg=0.0, x0=0.25, pitch=0.08):
    """Rows of boxes, ``spacing`` box heights apart, rotated about the centre."""
    boxes = []
    a = math.radians(angle_deg)
    for r in range(rows):
        for k in range(per_row):
            x, y = x0 + k * pitch, 0.3 + r * spacing * H
            dx, dy = x - 0.5, y - 0.5
            rx = 0.5 + dx * math.cos(a) - dy * math.sin(a)
            ry = 0.5 + dx * math.sin(a) + dy * math.cos(a)
            boxes.append(BBox(rx, ry, 0.04, H))
    return boxes


def partition(lines):
    return {frozenset(l.member_indices if isinstance(l, TextLine) else l) for l in lines}


def test_collinear_five():
    boxes = [BBox(x, 0.5, 0.04, H) for x in (0.6, 0.2, 0.4, 0.3, 0.5)]
    lines = extract_lines(boxes)
    assert len(lines) == 1
    assert lines[0].member_indices == (1, 3, 2, 4, 0)


def test_two_rows():
    boxes = row_boxes(2, 4)
    lines = reading_order(extract_lines(boxes))
    assert [l.member_indices for l in lines] == [(0, 1, 2, 3), (4, 5, 6, 7)]
    assert partition(brute_force_lines(boxes)) == partition(lines)


def test_rotation_keeps_grouping():
    flat = partition(extract_lines(row_boxes(3, 5)))
    for angle in (10.0, -10.0, 18.0):
        lines = reading_order(extract_lines(row_boxes(3, 5, angle_deg=angle)))
        assert partition(lines) == flat
        assert [l.member_indices for l in lines] == [(0, 1, 2, 3, 4), (5, 6, 7, 8, 9), (10, 11, 12, 13, 14)]


def test_orphan_becomes_singleton():
    boxes = row_boxes(1, 4) + [BBox(0.5, 0.8, 0.04, H)]
    lines = extract_lines(boxes)
    assert partition(lines) == {frozenset(range(4)), frozenset({4})}


def test_orphan_near_a_line_joins_it():
    # one box a full box height off the row: outside validation, inside twice its reach
    boxes = row_boxes(1, 4) + [BBox(0.65, 0.3 + H, 0.04, H)]
    lines = extract_lines(boxes)
    assert partition(lines) == {frozenset(range(5))}
    assert partition(brute_force_lines(boxes)) == {frozenset(range(5))}


def test_orphans_do_not_gather_into_singletons():
    boxes = row_boxes(1, 5)
    lines = extract_lines(boxes, HoughParams(min_boxes_per_line=6))
    assert partition(lines) == {frozenset({i}) for i in range(5)}


def test_empty_input():
    with pytest.raises(ValueError):
        extract_lines([])


def test_bad_params():
    with pytest.raises(ValueError):
        HoughParams(theta_step_deg=0)
    with pytest.raises(ValueError):
        HoughParams(min_boxes_per_line=0)


def test_reading_order_sorts_and_is_idempotent():
    lines = [TextLine((0,), 0, 0, 0.7), TextLine((1,), 0, 0, 0.3), TextLine((2,), 0, 0, 0.5)]
    once = reading_order(lines)
    assert [l.mean_y for l in once] == [0.3, 0.5, 0.7]
    assert reading_order(once) == once


def test_reading_order_sorts_members():
    boxes = [BBox(x, 0.5, 0.04, H) for x in (0.5, 0.2, 0.8, 0.35)]
    shuffled = TextLine((0, 1, 2, 3), 0.5, 0.0, 0.5)
    (line,) = reading_order([shuffled], boxes)
    assert line.member_indices == (1, 3, 0, 2)


@st.composite
def row_instances(draw):
    """At most eight boxes on up to three well separated, mildly skewed rows."""
    n_rows = draw(st.integers(1, 3))
    angle = draw(st.floats(-15, 15))
    a = math.radians(angle)
    boxes = []
    budget = 8
    for r in range(n_rows):
        k = draw(st.integers(1, max(1, min(4, budget - (n_rows - r - 1)))))
        budget -= k
        for j in range(k):
            jitter = draw(st.floats(-0.15, 0.15)) * H
            x, y = 0.2 + j * 0.09, 0.25 + r * 3.5 * H + jitter
            dx, dy = x - 0.5, y - 0.5
            boxes.append(BBox(0.5 + dx * math.cos(a) - dy * math.sin(a), 0.5 + dx * math.sin(a) + dy * math.cos(a), 0.04, H))
    return boxes


@settings(max_examples=120, deadline=None)
@given(row_instances())
def test_agrees_with_brute_force(boxes):
    lines = extract_lines(boxes)
    assert partition(lines) == partition(brute_force_lines(boxes))
    flat = sorted(i for l in lines for i in l.member_indices)
    assert flat == list(range(len(boxes)))


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 0.9), st.floats(0.1, 0.9)), min_size=1, max_size=15))
def test_partition_of_arbitrary_points(centres):
    boxes = [BBox(x, y, 0.03, 0.04) for x, y in centres]
    lines = extract_lines(boxes)
    flat = sorted(i for l in lines for i in l.member_indices)
    assert flat == list(range(len(boxes)))
    for l in lines:
        assert list(l.along) == sorted(l.along)


# --- transcription ---------------------------------------------------------


def labelled(seal, classes):
    return [
        LabeledDetection(Detection(c.bbox, 1.0), ClassScores.one_hot(classes, c.class_name)) for c in seal.chars
    ]


def test_oracle_round_trip_on_generated_seals(registry):
    classes = tuple(registry.names)
    cfg = CorpusConfig(rotation_deg=(-10.0, 10.0))
    manifest, _ = generate_corpus(cfg, 12, seed=31)
    for seal in manifest.seals:
        t = transcribe(labelled(seal, classes))
        assert t.lines == seal.transcription_gt


def test_ten_degree_member_order(registry):
    classes = tuple(registry.names)
    text = [["ALPHA", "TAU", "OMEGA", "NU"], ["PI", "ETA", "SIGMA", "MU", "RHO"], ["KAPPA", "IOTA", "DELTA"]]
    _, ann = generate_seal(SealSpec(text, rotation_deg=10.0), seed=4)
    assert transcribe(labelled(ann, classes)).lines == tuple(tuple(l) for l in text)


def test_all_noncharacter_is_empty(registry):
    classes = tuple(registry.names)
    dets = [LabeledDetection(Detection(b, 0.9), ClassScores.one_hot(classes, NON_CHARACTER)) for b in row_boxes(1, 3)]
    t = transcribe(dets)
    assert t == Transcription(()) and t.flattened == []


def test_noncharacters_dropped_before_grouping(registry):
    classes = tuple(registry.names)
    boxes = row_boxes(1, 4)
    labels = ["ALPHA", NON_CHARACTER, "TAU", "NU"]
    dets = [LabeledDetection(Detection(b, 0.9), ClassScores.one_hot(classes, n)) for b, n in zip(boxes, labels)]
    assert transcribe(dets).lines == (("ALPHA", "TAU", "NU"),)


def test_substitutions_only_cer(registry):
    # correct boxes, two wrong labels: the CER is the substitution fraction
    classes = tuple(registry.names)
    _, ann = generate_seal(SealSpec([["ALPHA", "TAU", "OMEGA", "NU", "PI"], ["ETA", "SIGMA", "MU", "RHO", "IOTA"]]), seed=2)
    dets = labelled(ann, classes)
    for k, wrong in ((1, "DELTA"), (7, "KAPPA")):
        dets[k] = LabeledDetection(dets[k].detection, ClassScores.one_hot(classes, wrong))
    t = transcribe(dets)
    e = levenshtein(t.flattened, [c for l in ann.transcription_gt for c in l])
    assert (e.S, e.D, e.I) == (2, 0, 0)
    assert e.S / e.N == pytest.approx(0.2)


def test_flattened_is_concatenation():
    t = Transcription((("A", "B"), ("C",)))
    assert t.flattened == ["A", "B", "C"]
