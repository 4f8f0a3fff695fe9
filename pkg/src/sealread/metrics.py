"""Evaluation maths: IoU, detection matching, AP/mAP, top-k, confusion, CER."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .corpus import BBox

COCO_THRESHOLDS: tuple[float, ...] = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


class MetricError(ValueError):
    pass


def iou(a: BBox, b: BBox) -> float:
    ix = min(a.x1, b.x1) - max(a.x0, b.x0)
    iy = min(a.y1, b.y1) - max(a.y0, b.y0)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    # areas from the same corner differences, so iou(a, a) is exactly 1
    area_a = (a.x1 - a.x0) * (a.y1 - a.y0)
    area_b = (b.x1 - b.x0) * (b.y1 - b.y0)
    union = area_a + area_b - inter
    return min(1.0, inter / union)


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    out = np.zeros((len(a), len(b)))
    for i, x in enumerate(a):
        for j, y in enumerate(b):
            out[i, j] = iou(x, y)
    return out


# ---------------------------------------------------------------------------
# Detection


@dataclass
class MatchResult:
    pairs: list[tuple[int, int, float]]
    unmatched_preds: list[int]
    unmatched_gts: list[int]

    @property
    def tp(self) -> int:
        return len(self.pairs)

    @property
    def fp(self) -> int:
        return len(self.unmatched_preds)

    @property
    def fn(self) -> int:
        return len(self.unmatched_gts)


def confidence_order(confidences: Sequence[float]) -> list[int]:
    """Indices by descending confidence; equal confidences keep input order."""
    return sorted(range(len(confidences)), key=lambda i: -confidences[i])


def match_detections(preds, gts: Sequence[BBox], iou_threshold: float = 0.5) -> MatchResult:
    """Greedy confidence-ordered matching of detections to ground truth.

    ``preds`` are objects with ``bbox`` and ``confidence`` attributes. Each
    prediction, most confident first, claims the still-unmatched gt with the
    highest IoU (lower gt index on ties) if that IoU is >= the threshold.
    """
    if not 0.0 < iou_threshold < 1.0 + 1e-12:
        raise MetricError("iou_threshold must be in (0, 1]")
    ious = iou_matrix([p.bbox for p in preds], gts)
    taken = [False] * len(gts)
    pairs = []
    unmatched_preds = []
    for pi in confidence_order([p.confidence for p in preds]):
        best, best_iou = -1, -1.0
        for gi in range(len(gts)):
            if not taken[gi] and ious[pi, gi] > best_iou:
                best, best_iou = gi, ious[pi, gi]
        if best >= 0 and best_iou >= iou_threshold:
            taken[best] = True
            pairs.append((pi, best, float(best_iou)))
        else:
            unmatched_preds.append(pi)
    unmatched_gts = [gi for gi in range(len(gts)) if not taken[gi]]
    return MatchResult(pairs, unmatched_preds, unmatched_gts)


@dataclass
class PRCurve:
    points: list[tuple[float, float]]  # (recall, precision), descending confidence


def _tp_flags(preds, gts, iou_threshold) -> list[tuple[float, bool]]:
    m = match_detections(preds, gts, iou_threshold)
    matched = {p for p, _, _ in m.pairs}
    return [(preds[i].confidence, i in matched) for i in range(len(preds))]


def pr_curve_from_flags(scored: Sequence[tuple[float, bool]], n_gt: int) -> PRCurve:
    if n_gt <= 0:
        raise MetricError("average precision is undefined without ground truth")
    order = sorted(range(len(scored)), key=lambda i: -scored[i][0])
    tp = fp = 0
    points = []
    for i in order:
        if scored[i][1]:
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    return PRCurve(points)


def ap_from_curve(curve: PRCurve) -> float:
    """All-point interpolated AP: area under the monotone precision envelope."""
    if not curve.points:
        return 0.0
    rec = np.array([0.0] + [r for r, _ in curve.points])
    prec = np.array([1.0] + [p for _, p in curve.points])
    # envelope: precision at recall r is the max precision at any recall >= r
    env = np.maximum.accumulate(prec[::-1])[::-1]
    return float(np.sum((rec[1:] - rec[:-1]) * env[1:]))


def average_precision(preds, gts: Sequence[BBox], iou_threshold: float = 0.5) -> float:
    if not gts:
        raise MetricError("average precision is undefined without ground truth")
    return ap_from_curve(pr_curve_from_flags(_tp_flags(preds, gts, iou_threshold), len(gts)))


def dataset_average_precision(images: Sequence[tuple[Sequence, Sequence[BBox]]], iou_threshold: float = 0.5) -> float:
    """AP pooled over several images: match per image, rank globally."""
    scored: list[tuple[float, bool]] = []
    n_gt = 0
    for preds, gts in images:
        scored.extend(_tp_flags(preds, gts, iou_threshold))
        n_gt += len(gts)
    return ap_from_curve(pr_curve_from_flags(scored, n_gt))


def map_range(preds, gts: Sequence[BBox], thresholds: Sequence[float] = COCO_THRESHOLDS) -> tuple[float, float]:
    """(AP at IoU 0.5, mean AP over ``thresholds``)."""
    aps = [average_precision(preds, gts, t) for t in thresholds]
    return average_precision(preds, gts, 0.5), float(np.mean(aps))


def dataset_map_range(images, thresholds: Sequence[float] = COCO_THRESHOLDS) -> tuple[float, float]:
    aps = [dataset_average_precision(images, t) for t in thresholds]
    return dataset_average_precision(images, 0.5), float(np.mean(aps))


def precision_recall(images, iou_threshold: float = 0.5, min_confidence: float = 0.0) -> tuple[float, float]:
    """Pooled precision and recall at a fixed confidence cut.

    Precision is reported as 0 when nothing is predicted.
    """
    tp = n_pred = n_gt = 0
    for preds, gts in images:
        kept = [p for p in preds if p.confidence >= min_confidence]
        m = match_detections(kept, gts, iou_threshold)
        tp += m.tp
        n_pred += len(kept)
        n_gt += len(gts)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return precision, recall


# ---------------------------------------------------------------------------
# Classification


def ranked_classes(scores: Sequence[float]) -> list[int]:
    """Class ids by descending score, ascending id on ties."""
    return sorted(range(len(scores)), key=lambda c: (-scores[c], c))


def _as_vectors(score_lists) -> list[Sequence[float]]:
    return [getattr(s, "scores", s) for s in score_lists]


def topk_accuracy(score_lists, labels: Sequence[int], k: int) -> float:
    if k < 1:
        raise MetricError("k must be >= 1")
    vectors = _as_vectors(score_lists)
    if not vectors:
        raise MetricError("top-k accuracy of an empty sample set")
    if len(vectors) != len(labels):
        raise MetricError("scores and labels differ in length")
    hits = sum(1 for s, y in zip(vectors, labels) if y in ranked_classes(s)[:k])
    return hits / len(vectors)


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class
    class_names: list[str] = field(default_factory=list)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred"] + list(self.class_names))
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name] + [int(v) for v in row])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"class_names": list(self.class_names), "counts": self.counts.astype(int).tolist()}


@dataclass
class ClassificationSummary:
    confusion: ConfusionMatrix
    macro_f1: float
    per_class_mean_acc: float
    per_class_f1: dict[str, float]
    excluded_classes: list[str]


def confusion_and_f1(score_lists, labels: Sequence[int], class_names: Sequence[str] | None = None) -> ClassificationSummary:
    """Top-1 confusion matrix, macro F1 and mean per-class recall.

    Classes with no true samples are left out of both means and listed in
    ``excluded_classes``.
    """
    vectors = _as_vectors(score_lists)
    if not vectors:
        raise MetricError("confusion matrix of an empty sample set")
    n = len(vectors[0])
    names = list(class_names) if class_names is not None else [str(i) for i in range(n)]
    cm = np.zeros((n, n), dtype=np.int64)
    for s, y in zip(vectors, labels):
        cm[y, ranked_classes(s)[0]] += 1
    f1s: dict[str, float] = {}
    recalls = []
    excluded = []
    for c in range(n):
        support = cm[c].sum()
        if support == 0:
            excluded.append(names[c])
            continue
        tp = cm[c, c]
        fp = cm[:, c].sum() - tp
        fn = support - tp
        f1s[names[c]] = float(2 * tp / (2 * tp + fp + fn))
        recalls.append(tp / support)
    return ClassificationSummary(
        ConfusionMatrix(cm, names),
        float(np.mean(list(f1s.values()))),
        float(np.mean(recalls)),
        f1s,
        excluded,
    )


# ---------------------------------------------------------------------------
# Edit distance


@dataclass(frozen=True)
class EditCounts:
    S: int
    D: int
    I: int
    N: int

    @property
    def distance(self) -> int:
        return self.S + self.D + self.I


def levenshtein(pred: Sequence[Hashable], gt: Sequence[Hashable]) -> EditCounts:
    """Unit-cost edit script turning ``pred`` into ``gt``.

    D counts predicted symbols removed, I counts ground-truth symbols
    inserted. Among minimal scripts the one with the most substitutions is
    chosen, which makes S, D and I unique.
    """
    m, n = len(pred), len(gt)
    # cost[i][j] = (distance, -substitutions) for pred[:i] -> gt[:j]
    cost = [[(0, 0)] * (n + 1) for _ in range(m + 1)]
    for i in range(1, m + 1):
        cost[i][0] = (i, 0)
    for j in range(1, n + 1):
        cost[0][j] = (j, 0)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            d, s = cost[i - 1][j - 1]
            diag = (d, s) if pred[i - 1] == gt[j - 1] else (d + 1, s - 1)
            up = cost[i - 1][j]
            left = cost[i][j - 1]
            cost[i][j] = min(diag, (up[0] + 1, up[1]), (left[0] + 1, left[1]))
    # backtrace, preferring match > substitute > delete > insert
    i, j = m, n
    S = D = I = 0
    while i > 0 or j > 0:
        here = cost[i][j]
        if i > 0 and j > 0:
            d, s = cost[i - 1][j - 1]
            if pred[i - 1] == gt[j - 1] and (d, s) == here:
                i, j = i - 1, j - 1
                continue
            if pred[i - 1] != gt[j - 1] and (d + 1, s - 1) == here:
                S += 1
                i, j = i - 1, j - 1
                continue
        if i > 0 and (cost[i - 1][j][0] + 1, cost[i - 1][j][1]) == here:
            D += 1
            i -= 1
            continue
        I += 1
        j -= 1
    return EditCounts(S, D, I, n)


def cer(pred: Sequence[Hashable], gt: Sequence[Hashable]) -> float:
    if len(gt) == 0:
        raise MetricError("CER is undefined for an empty ground truth")
    return levenshtein(pred, gt).distance / len(gt)


def mean(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise MetricError("mean of nothing")
    return float(np.mean(values))


def fold_cer(seal_cers: Sequence[float]) -> float:
    """CER of a fold: unweighted mean over its seals."""
    return mean(seal_cers)


def overall_cer(fold_cers: Sequence[float]) -> float:
    """Cross-validation CER: unweighted mean over folds."""
    return mean(fold_cers)
