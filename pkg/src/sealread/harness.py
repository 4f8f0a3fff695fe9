"""Cross-validation of the full pipeline and report emission.

For every fold: fit the backends on the training seals, then for each test
seal run detection (scored against the ground-truth boxes), classification
of the ground-truth crops plus sampled non-character crops, and the full
detect -> classify -> transcribe chain (scored by CER).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .alphabet import NON_CHARACTER, AlphabetRegistry, classification_subset, default_registry
from .corpus import (
    CharBox,
    CorpusManifest,
    FoldError,
    FoldPlan,
    SealAnnotation,
    augment_training,
    check_no_leakage,
    crop_box,
    derive_seed,
    fold_split,
    make_folds,
    sample_noncharacters,
    with_chars,
)
from .infer import Backend, ClassScores, InferenceError, LabeledDetection, classify, detect, make_backend
from .infer.baseline import BaselineParams
from .lineify import HoughParams, transcribe
from .metrics import (
    confusion_and_f1,
    dataset_average_precision,
    dataset_map_range,
    levenshtein,
    precision_recall,
    topk_accuracy,
)

REPORT_FORMAT = "sealread-report/1"

log = logging.getLogger(__name__)


class ReportError(ValueError):
    pass


@dataclass
class RunConfig:
    k: int = 10
    seed: int = 0
    iou_threshold: float = 0.5
    hough: HoughParams = field(default_factory=HoughParams)
    detector: str = "baseline"
    classifier: str = "baseline"
    detector_command: str | None = None  # external backends; "{fold}" is substituted
    classifier_command: str | None = None
    external_timeout: float = 30.0
    min_samples: int = 50
    subset_counts: str = "corpus"  # "corpus": counts of the selected seals; "fixture": bundled counts
    noncharacters: int = 150  # per fold, spread over the seals of each side of the split
    augment_obverse: int = 0
    side: str = "reverse"
    conf_threshold: float = 0.25
    nms_threshold: float = 0.45
    pad_fraction: float = 0.1
    crop_size: int = 256
    validation_fraction: float = 0.15  # handed to external trainers; unused by the baseline
    baseline: BaselineParams = field(default_factory=BaselineParams)
    jobs: int = 1

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("k must be >= 2")
        if not 0 < self.iou_threshold < 1:
            raise ValueError("iou_threshold must lie in (0, 1)")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")
        if self.subset_counts not in ("corpus", "fixture"):
            raise ValueError("subset_counts must be 'corpus' or 'fixture'")
        if self.noncharacters < 0 or self.augment_obverse < 0:
            raise ValueError("counts must be >= 0")
        if not 0 <= self.conf_threshold <= 1 or not 0 <= self.nms_threshold <= 1:
            raise ValueError("thresholds must lie in [0, 1]")
        if self.pad_fraction < 0 or self.crop_size < 1:
            raise ValueError("invalid crop settings")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in [0, 1)")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        if self.external_timeout <= 0:
            raise ValueError("external_timeout must be positive")
        for role, name, cmd in (("detector", self.detector, self.detector_command),
                                ("classifier", self.classifier, self.classifier_command)):
            if name not in ("baseline", "oracle", "empty", "external"):
                raise ValueError(f"unknown {role} backend {name!r}")
            if name == "external" and not cmd:
                raise ValueError(f"external {role} needs a command")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hough"] = asdict(self.hough)
        d["baseline"] = asdict(self.baseline)
        return d

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(doc)
        if isinstance(kw.get("hough"), Mapping):
            kw["hough"] = HoughParams(**kw["hough"])
        if isinstance(kw.get("baseline"), Mapping):
            kw["baseline"] = BaselineParams(**kw["baseline"])
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SealResult:
    seal_id: str
    cer: float | None = None
    S: int = 0
    D: int = 0
    I: int = 0
    N: int = 0
    predicted: list[list[str]] = field(default_factory=list)
    ground_truth: list[list[str]] = field(default_factory=list)
    error: str | None = None

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SealResult":
        return cls(**d)


@dataclass
class FoldReport:
    fold_index: int
    test_ids: list[str]
    n_train: int
    detection: dict | None  # precision, recall, map50, map5095 (None when every seal failed)
    classification: dict | None  # top1..3, macro_f1, per_class_mean_acc, confusion, ...
    seals: list[SealResult]
    fold_cer: float | None

    @property
    def failed(self) -> list[SealResult]:
        return [s for s in self.seals if s.failed]

    def to_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "test_ids": list(self.test_ids),
            "n_train": self.n_train,
            "detection": self.detection,
            "classification": self.classification,
            "transcription": {
                "fold_cer": self.fold_cer,
                "seals": [s.to_dict() for s in self.seals],
                "failed": [s.seal_id for s in self.failed],
            },
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FoldReport":
        t = d["transcription"]
        return cls(
            d["fold_index"], list(d["test_ids"]), d["n_train"], d["detection"], d["classification"],
            [SealResult.from_dict(s) for s in t["seals"]], t["fold_cer"],
        )


SCALARS = {
    "detection": ("precision", "recall", "map50", "map5095"),
    "classification": ("top1", "top2", "top3", "macro_f1", "per_class_mean_acc"),
}


@dataclass
class CVReport:
    config: dict
    classes: list[str]
    fold_plan: dict
    folds: list[FoldReport]

    @property
    def overall(self) -> dict:
        return overall_metrics(self.folds)

    def to_dict(self) -> dict:
        return {
            "format": REPORT_FORMAT,
            "config": self.config,
            "classes": self.classes,
            "fold_plan": self.fold_plan,
            "folds": [f.to_dict() for f in self.folds],
            "overall": self.overall,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CVReport":
        if d.get("format") != REPORT_FORMAT:
            raise ReportError(f"not a {REPORT_FORMAT} document")
        return cls(d["config"], list(d["classes"]), d["fold_plan"], [FoldReport.from_dict(f) for f in d["folds"]])

    @classmethod
    def load(cls, path: str | Path) -> "CVReport":
        path = Path(path)
        if path.is_dir():
            path = path / "report.json"
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


def _mean_or_none(values: Sequence[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def overall_metrics(folds: Sequence[FoldReport]) -> dict:
    """Unweighted means over folds of every scalar metric."""
    if not folds:
        raise ReportError("a report needs at least one fold")
    out: dict[str, Any] = {}
    for group, keys in SCALARS.items():
        out[group] = {
            k: _mean_or_none([(getattr(f, group) or {}).get(k) for f in folds]) for k in keys
        }
    out["cer"] = _mean_or_none([f.fold_cer for f in folds])
    out["n_seals"] = sum(len(f.seals) for f in folds)
    out["n_failed"] = sum(len(f.failed) for f in folds)
    return out


# ---------------------------------------------------------------------------
# Running


def active_classes(manifest: CorpusManifest, config: RunConfig, registry: AlphabetRegistry | None = None) -> list[str]:
    registry = registry or default_registry()
    counts = manifest.class_counts(config.side) if config.subset_counts == "corpus" else None
    return [c.name for c in classification_subset(registry, counts, config.min_samples)]


def _spread(total: int, n: int) -> list[int]:
    return [total // n + (1 if i < total % n else 0) for i in range(n)] if n else []


def with_noncharacters(seals: Sequence[SealAnnotation], total: int, plan_seed: int, fold_index: int) -> list[SealAnnotation]:
    """Add ``total`` sampled NON_CHARACTER boxes, spread evenly over ``seals``.

    The sampling seed depends on (plan seed, fold, seal id), so every fold
    draws fresh negatives.
    """
    out = []
    for seal, n in zip(seals, _spread(total, len(seals))):
        if n and any(c.class_name != NON_CHARACTER for c in seal.chars):
            extra = sample_noncharacters(seal, n, derive_seed(plan_seed, fold_index, seal.seal_id))
            seal = with_chars(seal, list(seal.chars) + extra)
        out.append(seal)
    return out


def obverse_extras(manifest: CorpusManifest, count: int, seed: int, fold_index: int, side: str) -> list[SealAnnotation]:
    if count == 0:
        return []
    other = sorted((s for s in manifest.seals if s.side != side), key=lambda s: s.seal_id)
    rng = np.random.default_rng(derive_seed(seed, "augment", fold_index))
    order = rng.permutation(len(other))
    return [other[i] for i in order[:count]]


def build_backends(config: RunConfig) -> tuple[Backend, Backend]:
    det = make_backend(config.detector, config.detector_command, config.external_timeout, "detect",
                       config.baseline, config.pad_fraction, config.crop_size)
    if config.classifier == config.detector and config.classifier != "external":
        return det, det
    cls = make_backend(config.classifier, config.classifier_command, config.external_timeout, "classify",
                       config.baseline, config.pad_fraction, config.crop_size)
    return det, cls


@dataclass
class _SealOutcome:
    result: SealResult
    detections: list = field(default_factory=list)
    gt_boxes: list = field(default_factory=list)
    scores: list[ClassScores] = field(default_factory=list)
    labels: list[int] = field(default_factory=list)


def evaluate_seal(
    seal: SealAnnotation,
    image: np.ndarray,
    detector: Backend,
    classifier: Backend,
    classes: Sequence[str],
    config: RunConfig,
) -> _SealOutcome:
    index = {name: i for i, name in enumerate(classes)}
    gt_lines = seal.transcription_gt or [[c.class_name for c in seal.chars if c.class_name != NON_CHARACTER]]
    result = SealResult(seal.seal_id, ground_truth=[list(l) for l in gt_lines])
    real = [c for c in seal.chars if c.class_name != NON_CHARACTER]
    try:
        dets = detect(detector, image, seal, config.conf_threshold, config.nms_threshold)

        kept, crops = [], []
        for d in dets:
            crop = crop_box(image, d.bbox, config.pad_fraction, config.crop_size)
            if crop is not None:
                kept.append(d)
                crops.append(crop)
        scores = classify(classifier, crops, seal, [d.bbox for d in kept])
        trans = transcribe([LabeledDetection(d, s) for d, s in zip(kept, scores)], config.hough)
        gt_seq = seal.gt_sequence
        if not gt_seq:
            raise ValueError("seal has no ground-truth characters")
        e = levenshtein(trans.flattened, gt_seq)
        result.cer = e.distance / e.N
        result.S, result.D, result.I, result.N = e.S, e.D, e.I, e.N
        result.predicted = [list(l) for l in trans.lines]

        # classification on ground-truth crops (active classes and sampled negatives only)
        eval_chars: list[CharBox] = [c for c in seal.chars if c.class_name in index]
        gt_crops, gt_boxes, labels = [], [], []
        for c in eval_chars:
            crop = crop_box(image, c.bbox, config.pad_fraction, config.crop_size)
            if crop is not None:
                gt_crops.append(crop)
                gt_boxes.append(c.bbox)
                labels.append(index[c.class_name])
        gt_scores = classify(classifier, gt_crops, seal, gt_boxes)
    except (InferenceError, OSError, ValueError) as exc:
        log.warning("seal %s failed: %s", seal.seal_id, exc)
        result.error = f"{type(exc).__name__}: {exc}"
        return _SealOutcome(result)
    return _SealOutcome(result, dets, [c.bbox for c in real], gt_scores, labels)


def run_fold(
    manifest: CorpusManifest,
    plan: FoldPlan,
    fold_index: int,
    config: RunConfig,
    classes: Sequence[str] | None = None,
    backends: tuple[Backend, Backend] | None = None,
) -> FoldReport:
    classes = list(classes) if classes is not None else active_classes(manifest, config)
    train, test = fold_split(plan, fold_index, manifest)
    train = augment_training(train, obverse_extras(manifest, config.augment_obverse, plan.seed, fold_index, config.side), test)
    test_ids = [s.seal_id for s in test]
    check_no_leakage((s.seal_id for s in train), test_ids)

    train = with_noncharacters(train, config.noncharacters, plan.seed, fold_index)
    test = with_noncharacters(test, config.noncharacters, plan.seed, fold_index)

    own = backends is None
    detector, classifier = backends if backends is not None else build_backends(config)
    try:
        detector.fit(train, manifest.load_image, classes, fold_index)
        if classifier is not detector:
            classifier.fit(train, manifest.load_image, classes, fold_index)
        check_no_leakage(detector.trained_on | classifier.trained_on, test_ids)

        def one(seal: SealAnnotation) -> _SealOutcome:
            try:
                image = manifest.load_image(seal)
            except (OSError, ValueError) as exc:
                return _SealOutcome(SealResult(seal.seal_id, error=f"{type(exc).__name__}: {exc}"))
            return evaluate_seal(seal, image, detector, classifier, classes, config)

        if config.jobs > 1:
            with ThreadPoolExecutor(config.jobs) as pool:
                outcomes = list(pool.map(one, test))
        else:
            outcomes = [one(s) for s in test]
    finally:
        if own:
            detector.close()
            classifier.close()

    ok = [o for o in outcomes if not o.result.failed]
    detection = None
    images = [(o.detections, o.gt_boxes) for o in ok if o.gt_boxes]
    if images:
        precision, recall = precision_recall(images, config.iou_threshold)
        map50 = dataset_average_precision(images, config.iou_threshold)
        _, map5095 = dataset_map_range(images)
        detection = {
            "precision": precision, "recall": recall, "map50": map50, "map5095": map5095,
            "n_gt": sum(len(g) for _, g in images), "n_pred": sum(len(p) for p, _ in images),
        }
    classification = None
    scores = [s for o in ok for s in o.scores]
    labels = [y for o in ok for y in o.labels]
    if scores:
        summary = confusion_and_f1(scores, labels, classes)
        classification = {
            "top1": topk_accuracy(scores, labels, 1),
            "top2": topk_accuracy(scores, labels, 2),
            "top3": topk_accuracy(scores, labels, 3),
            "macro_f1": summary.macro_f1,
            "per_class_mean_acc": summary.per_class_mean_acc,
            "per_class_f1": summary.per_class_f1,
            "excluded_classes": summary.excluded_classes,
            "n_crops": len(scores),
            "n_noncharacter": sum(1 for y in labels if classes[y] == NON_CHARACTER),
            "confusion": summary.confusion.to_dict(),
        }
    cers = [o.result.cer for o in ok]
    return FoldReport(
        fold_index, test_ids, len(train), detection, classification,
        [o.result for o in outcomes], float(np.mean(cers)) if cers else None,
    )


def cross_validate(
    manifest: CorpusManifest,
    config: RunConfig,
    plan: FoldPlan | None = None,
    backends: tuple[Backend, Backend] | None = None,
) -> CVReport:
    plan = plan or make_folds(manifest, config.k, config.seed, side_filter=config.side)
    if plan.k != len(plan.folds) or plan.k < 2:
        raise FoldError("fold plan is inconsistent")
    classes = active_classes(manifest, config)
    folds = [run_fold(manifest, plan, i, config, classes, backends) for i in range(plan.k)]
    return CVReport(config.to_dict(), classes, plan.to_dict(), folds)


# ---------------------------------------------------------------------------
# Rendering


def _pct(v: float | None) -> str:
    return "n/a" if v is None else f"{100 * v:.2f}"


def _dec(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.2f}"


def detection_table(rows: Sequence[tuple[str | None, Mapping | None]]) -> str:
    """Precision / recall / mAP table; values are fractions, shown as percents."""
    label = any(name is not None for name, _ in rows)
    head = ["Precision", "Recall", "mAP@0.5", "mAP@[0.5:0.95]"]
    lines = ["| " + " | ".join((["Fold"] if label else []) + head) + " |",
             "|" + "---|" * (len(head) + label)]
    for name, d in rows:
        d = d or {}
        cells = [_pct(d.get(k)) for k in SCALARS["detection"]]
        lines.append("| " + " | ".join(([name] if label else []) + cells) + " |")
    return "\n".join(lines) + "\n"


def classification_table(rows: Sequence[tuple[str | None, Mapping | None]]) -> str:
    label = any(name is not None for name, _ in rows)
    head = ["Top-1 acc.", "Top-2 acc.", "Top-3 acc.", "F1 Score"]
    lines = ["| " + " | ".join((["Fold"] if label else []) + head) + " |",
             "|" + "---|" * (len(head) + label)]
    for name, d in rows:
        d = d or {}
        cells = [_pct(d.get(k)) for k in ("top1", "top2", "top3", "macro_f1")]
        lines.append("| " + " | ".join(([name] if label else []) + cells) + " |")
    return "\n".join(lines) + "\n"


def cer_table(fold_cers: Sequence[float | None], overall: float | None = None) -> str:
    """One row of per-fold CERs followed by the overall (fold-mean) value."""
    if overall is None:
        overall = _mean_or_none(fold_cers)
    head = ["Fold"] + [str(i + 1) for i in range(len(fold_cers))] + ["overall"]
    row = ["CER"] + [_dec(v) for v in fold_cers] + [_dec(overall)]
    return "\n".join([
        "| " + " | ".join(head) + " |",
        "|" + "---|" * len(head),
        "| " + " | ".join(row) + " |",
    ]) + "\n"


def render_tables(report: CVReport) -> str:
    ov = report.overall
    parts = [
        "## Detection\n\n" + detection_table([(None, ov["detection"])]),
        detection_table([(str(f.fold_index + 1), f.detection) for f in report.folds]),
        "## Classification\n\n" + classification_table([(None, ov["classification"])]),
        classification_table([(str(f.fold_index + 1), f.classification) for f in report.folds]),
        f"Mean per-class accuracy: {_pct(ov['classification']['per_class_mean_acc'])}\n",
        "## Transcription\n\n" + cer_table([f.fold_cer for f in report.folds], ov["cer"]),
    ]
    if ov["n_failed"]:
        failed = [s.seal_id for f in report.folds for s in f.failed]
        parts.append(f"Failed seals ({len(failed)}): {', '.join(failed)}\n")
    return "\n".join(parts)


def per_seal_csv(report: CVReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seal_id", "fold", "cer", "S", "D", "I", "N", "error"])
    for f in report.folds:
        for s in f.seals:
            w.writerow([s.seal_id, f.fold_index, "" if s.cer is None else repr(s.cer),
                        s.S, s.D, s.I, s.N, s.error or ""])
    return buf.getvalue()


def render_text(lines: Sequence[Sequence[str]], registry: AlphabetRegistry) -> list[str]:
    """Class names to display text, one string per line."""
    return ["".join(registry.lookup(n).text for n in line) for line in lines]


def transcriptions_text(report: CVReport, registry: AlphabetRegistry | None = None) -> str:
    registry = registry or default_registry()
    out = []
    for f in report.folds:
        for s in f.seals:
            out.append(f"# {s.seal_id} (fold {f.fold_index + 1})")
            if s.failed:
                out.append(f"failed: {s.error}")
            else:
                out.append(f"CER {s.cer:.4f}  S={s.S} D={s.D} I={s.I} N={s.N}")
                pred = render_text(s.predicted, registry)
                gt = render_text(s.ground_truth, registry)
                width = max([len(t) for t in pred + gt] + [9])
                out.append(f"{'predicted':<{width}}  ground truth")
                for i in range(max(len(pred), len(gt))):
                    p = pred[i] if i < len(pred) else ""
                    g = gt[i] if i < len(gt) else ""
                    out.append(f"{p:<{width}}  {g}")
            out.append("")
    return "\n".join(out)


def emit_report(report: CVReport, out_dir: str | Path, formats: Sequence[str] = ("json", "md", "csv", "txt")) -> list[Path]:
    """Write the report files; returns their paths.

    json: report.json (full, sorted keys); md: tables.md; csv: per_seal_cer.csv
    and confusion_fold<i>.csv; txt: transcriptions.txt.
    """
    if not report.folds:
        raise ReportError("refusing to write a report without folds")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if "json" in formats:
        text = json.dumps(report.to_dict(), indent=1, sort_keys=True, ensure_ascii=False) + "\n"
        (out / "report.json").write_text(text, encoding="utf-8")
        written.append(out / "report.json")
    if "md" in formats:
        (out / "tables.md").write_text(render_tables(report), encoding="utf-8")
        written.append(out / "tables.md")
    if "csv" in formats:
        (out / "per_seal_cer.csv").write_text(per_seal_csv(report), encoding="utf-8")
        written.append(out / "per_seal_cer.csv")
        for f in report.folds:
            if f.classification:
                c = f.classification["confusion"]
                buf = io.StringIO()
                w = csv.writer(buf, lineterminator="\n")
                w.writerow(["true\\pred"] + c["class_names"])
                for name, row in zip(c["class_names"], c["counts"]):
                    w.writerow([name] + row)
                p = out / f"confusion_fold{f.fold_index + 1}.csv"
                p.write_text(buf.getvalue(), encoding="utf-8")
                written.append(p)
    if "txt" in formats:
        (out / "transcriptions.txt").write_text(transcriptions_text(report), encoding="utf-8")
        written.append(out / "transcriptions.txt")
    return written
