"""Model backends behind one interface.

A backend is fitted once per fold on the training seals, then asked to
detect on whole seal images and to classify character crops. ``trained_on``
names the seals whose data shaped the backend, for the leakage guard.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..alphabet import NON_CHARACTER
from ..corpus import BBox, SealAnnotation
from ..metrics import iou
from .baseline import BaselineParams, TemplateBank, baseline_classify, baseline_detect, build_templates
from .external import ExternalModel
from .types import ClassScores, Detection, InferenceError

ImageLoader = Callable[[SealAnnotation], np.ndarray]
BACKENDS = ("baseline", "oracle", "empty", "external")


class Backend:
    name = "abstract"

    def __init__(self):
        self.classes: tuple[str, ...] = ()
        self.trained_on: frozenset[str] = frozenset()

    def fit(self, train: Sequence[SealAnnotation], load_image: ImageLoader, classes: Sequence[str], fold_index: int) -> None:
        self.classes = tuple(classes)

    def detect(self, image: np.ndarray, seal: SealAnnotation | None = None) -> list[Detection]:
        raise NotImplementedError

    def classify(self, crops: Sequence[np.ndarray], seal: SealAnnotation | None = None,
                 boxes: Sequence[BBox] | None = None) -> list[ClassScores]:
        raise NotImplementedError

    def close(self) -> None:
        pass


class BaselineBackend(Backend):
    """Template matcher; fitting builds the templates from training crops."""

    name = "baseline"

    def __init__(self, params: BaselineParams | None = None, pad_fraction: float = 0.1,
                 crop_size: int = 256, bank: TemplateBank | None = None):
        super().__init__()
        self.params = params or BaselineParams()
        self.pad_fraction = pad_fraction
        self.crop_size = crop_size
        self.bank = bank
        if bank is not None:
            self.classes = tuple(bank.classes) + (NON_CHARACTER,)
            self.trained_on = frozenset(bank.source_seals)

    def fit(self, train, load_image, classes, fold_index):
        super().fit(train, load_image, classes, fold_index)
        self.bank = build_templates(
            train, load_image, self.params, self.pad_fraction, self.crop_size,
            classes=[c for c in classes if c != NON_CHARACTER],
        )
        self.trained_on = frozenset(self.bank.source_seals)

    def _need_bank(self) -> TemplateBank:
        if self.bank is None:
            raise InferenceError("baseline backend used before fit()")
        return self.bank

    def detect(self, image, seal=None):
        return baseline_detect(image, self._need_bank())

    def classify(self, crops, seal=None, boxes=None):
        bank = self._need_bank()
        return [baseline_classify(c, bank, self.classes) for c in crops]


class OracleBackend(Backend):
    """Answers from the ground truth; validates the harness wiring."""

    name = "oracle"

    def detect(self, image, seal=None):
        if seal is None:
            raise InferenceError("oracle backend needs the seal annotation")
        return [Detection(c.bbox, 1.0) for c in seal.chars if c.class_name != NON_CHARACTER]

    def classify(self, crops, seal=None, boxes=None):
        if seal is None or boxes is None or len(boxes) != len(crops):
            raise InferenceError("oracle backend needs the seal annotation and one box per crop")
        out = []
        for box in boxes:
            best, best_iou = NON_CHARACTER, 0.0
            for c in seal.chars:
                v = iou(box, c.bbox)
                if v > best_iou:
                    best, best_iou = c.class_name, v
            if best_iou < 0.5 or best not in self.classes:
                best = NON_CHARACTER
            out.append(ClassScores.one_hot(self.classes, best))
        return out


class EmptyBackend(Backend):
    """Detects nothing and calls every crop a non-character."""

    name = "empty"

    def detect(self, image, seal=None):
        return []

    def classify(self, crops, seal=None, boxes=None):
        return [ClassScores.one_hot(self.classes, NON_CHARACTER) for _ in crops]


class ExternalBackend(Backend):
    """A child process per fold; ``{fold}`` in the command is substituted."""

    name = "external"

    def __init__(self, command: str, timeout: float = 30.0, role: str = "detect"):
        super().__init__()
        if not command:
            raise ValueError("external backend needs a command")
        self.command = command
        self.timeout = timeout
        self.role = role
        self.model: ExternalModel | None = None

    def fit(self, train, load_image, classes, fold_index):
        super().fit(train, load_image, classes, fold_index)
        self.close()
        self.model = ExternalModel(
            self.command.replace("{fold}", str(fold_index)), self.timeout,
            classes=self.classes or None, require_ops=(self.role,),
        )
        hs = self.model.ensure_started()
        if self.model.classes is not None:
            self.classes = self.model.classes
        self.trained_on = frozenset(hs.get("trained_on", ()))

    def _need_model(self) -> ExternalModel:
        if self.model is None:
            raise InferenceError("external backend used before fit()")
        return self.model

    def detect(self, image, seal=None):
        return self._need_model().detect(image)

    def classify(self, crops, seal=None, boxes=None):
        m = self._need_model()
        return [m.classify(c) for c in crops]

    def close(self):
        if self.model is not None:
            self.model.close()
            self.model = None


def make_backend(name: str, command: str | None = None, timeout: float = 30.0, role: str = "detect",
                 params: BaselineParams | None = None, pad_fraction: float = 0.1, crop_size: int = 256) -> Backend:
    if name == "baseline":
        return BaselineBackend(params, pad_fraction, crop_size)
    if name == "oracle":
        return OracleBackend()
    if name == "empty":
        return EmptyBackend()
    if name == "external":
        return ExternalBackend(command or "", timeout, role)
    raise ValueError(f"unknown backend {name!r}; choose from {', '.join(BACKENDS)}")
