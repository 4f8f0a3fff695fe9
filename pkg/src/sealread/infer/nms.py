from __future__ import annotations

from typing import Sequence

from ..metrics import iou
from .types import Detection


def nms(candidates: Sequence[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy non-maximum suppression.

    Candidates are visited by descending confidence (then ascending cx, cy);
    one is kept unless its IoU with an already kept box exceeds the threshold.
    """
    order = sorted(candidates, key=lambda d: (-d.confidence, d.bbox.cx, d.bbox.cy))
    kept: list[Detection] = []
    for d in order:
        if all(iou(d.bbox, k.bbox) <= iou_threshold for k in kept):
            kept.append(d)
    return kept
