"""Detector and classifier front-ends.

:func:`detect` and :func:`classify` enforce the output contract whatever
the backend: detections sorted by descending confidence with no surviving
pair above the NMS threshold, and normalised scores over the active subset.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..corpus import BBox, SealAnnotation
from .backends import (
    BACKENDS,
    Backend,
    BaselineBackend,
    EmptyBackend,
    ExternalBackend,
    OracleBackend,
    make_backend,
)
from .baseline import BaselineParams, TemplateBank, baseline_classify, baseline_detect, build_templates
from .external import PROTOCOL, ExternalModel
from .nms import nms
from .types import ClassScores, Detection, InferenceError, LabeledDetection

DEFAULT_CONF_THRESHOLD = 0.25
DEFAULT_NMS_THRESHOLD = 0.45


def detect(
    model: Backend,
    image: np.ndarray,
    seal: SealAnnotation | None = None,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    nms_threshold: float = DEFAULT_NMS_THRESHOLD,
) -> list[Detection]:
    if image is None or image.size == 0:
        raise ValueError("empty image")
    raw = model.detect(image, seal)
    return nms([d for d in raw if d.confidence >= conf_threshold], nms_threshold)


def classify(
    model: Backend,
    crops: Sequence[np.ndarray],
    seal: SealAnnotation | None = None,
    boxes: Sequence[BBox] | None = None,
) -> list[ClassScores]:
    for c in crops:
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"crops must be square gray rasters, got shape {c.shape}")
    if not crops:
        return []
    out = model.classify(list(crops), seal, boxes)
    if len(out) != len(crops):
        raise InferenceError(f"{len(out)} score vectors for {len(crops)} crops")
    for s in out:
        if s.classes != model.classes:
            raise InferenceError("score vector is not over the active subset")
    return out


__all__ = [
    "BACKENDS", "Backend", "BaselineBackend", "BaselineParams", "ClassScores", "DEFAULT_CONF_THRESHOLD",
    "DEFAULT_NMS_THRESHOLD", "Detection", "EmptyBackend", "ExternalBackend", "ExternalModel",
    "InferenceError", "LabeledDetection", "OracleBackend", "PROTOCOL", "TemplateBank", "baseline_classify",
    "baseline_detect", "build_templates", "classify", "detect", "make_backend", "nms",
]
