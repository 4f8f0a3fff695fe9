from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from ..alphabet import NON_CHARACTER
from ..corpus import BBox

SCORE_TOLERANCE = 1e-6


class InferenceError(RuntimeError):
    """A model backend failed to produce a valid answer."""


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0) or math.isnan(self.confidence):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_dict(self) -> dict:
        b = self.bbox
        return {"cx": b.cx, "cy": b.cy, "w": b.w, "h": b.h, "conf": self.confidence}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Detection":
        return cls(BBox(float(d["cx"]), float(d["cy"]), float(d["w"]), float(d["h"])), float(d["conf"]))


@dataclass(frozen=True)
class ClassScores:
    """Probability-like scores over an ordered class subset."""

    classes: tuple[str, ...]
    scores: tuple[float, ...]

    def __post_init__(self):
        if len(self.classes) != len(self.scores):
            raise ValueError("one score per class required")
        if any(s < 0 or math.isnan(s) for s in self.scores):
            raise ValueError("scores must be nonnegative")
        total = math.fsum(self.scores)
        if abs(total - 1.0) > SCORE_TOLERANCE:
            raise ValueError(f"scores sum to {total}, not 1")

    @classmethod
    def normalized(cls, classes: Sequence[str], raw: Sequence[float]) -> "ClassScores":
        total = math.fsum(raw)
        if total <= 0:
            raise ValueError("cannot normalise an all-zero score vector")
        return cls(tuple(classes), tuple(float(v) / total for v in raw))

    @classmethod
    def one_hot(cls, classes: Sequence[str], name: str) -> "ClassScores":
        return cls(tuple(classes), tuple(1.0 if c == name else 0.0 for c in classes))

    @property
    def argmax(self) -> int:
        best = 0
        for i, s in enumerate(self.scores):
            if s > self.scores[best]:
                best = i
        return best

    @property
    def label(self) -> str:
        return self.classes[self.argmax]

    @property
    def is_non_character(self) -> bool:
        return self.label == NON_CHARACTER

    def to_dict(self) -> dict[str, float]:
        return dict(zip(self.classes, self.scores))


@dataclass(frozen=True)
class LabeledDetection:
    detection: Detection
    scores: ClassScores

    @property
    def bbox(self) -> BBox:
        return self.detection.bbox

    @property
    def confidence(self) -> float:
        return self.detection.confidence
