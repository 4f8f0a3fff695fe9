"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 runtime or backend failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .alphabet import SAMPLE_COUNTS, default_registry, classification_subset
from .corpus import FoldPlan, load_manifest, make_folds, read_image, crop_box
from .harness import (
    CVReport,
    RunConfig,
    classification_table,
    cross_validate,
    detection_table,
    emit_report,
    render_tables,
    render_text,
    run_fold,
    active_classes,
)
from .infer import BaselineBackend, InferenceError, LabeledDetection, classify, detect, make_backend
from .infer.baseline import TemplateBank, build_templates
from .lineify import transcribe

log = logging.getLogger("sealread")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _run_options(p: argparse.ArgumentParser, corpus_required: bool = True) -> None:
    p.add_argument("--corpus", required=corpus_required, help="corpus directory or manifest.json")
    p.add_argument("--config", help="JSON file with RunConfig fields (flags override it)")
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--plan", help="fold plan JSON (default: built from --k/--seed)")
    p.add_argument("--detector", choices=["baseline", "oracle", "empty", "external"])
    p.add_argument("--classifier", choices=["baseline", "oracle", "empty", "external"])
    p.add_argument("--detector-command", help="external detector command line; {fold} is substituted")
    p.add_argument("--classifier-command", help="external classifier command line; {fold} is substituted")
    p.add_argument("--timeout", type=float, dest="external_timeout", help="seconds per external request")
    p.add_argument("--min-samples", type=int)
    p.add_argument("--subset-counts", choices=["corpus", "fixture"])
    p.add_argument("--noncharacters", type=int, help="sampled non-character boxes per fold and split side")
    p.add_argument("--augment-obverse", type=int, help="obverse seals added to every training split")
    p.add_argument("--iou-threshold", type=float)
    p.add_argument("--conf-threshold", type=float)
    p.add_argument("--nms-threshold", type=float)
    p.add_argument("--jobs", type=int, help="seals evaluated concurrently within a fold")
    p.add_argument("--out", help="output directory for report files")


RUN_FLAGS = (
    "k", "seed", "detector", "classifier", "detector_command", "classifier_command", "external_timeout",
    "min_samples", "subset_counts", "noncharacters", "augment_obverse", "iou_threshold", "conf_threshold",
    "nms_threshold", "jobs",
)


def build_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    doc = {}
    if args.config:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise ValueError("config file must hold a JSON object")
    for name in RUN_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            doc[name] = v
    return RunConfig.from_dict(doc)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="sealread", description="Seal reading pipeline: synthetic data, evaluation, transcription.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic seal corpus")
    p.add_argument("--n", type=int, required=True, help="number of seals")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file with CorpusConfig fields")
    p.add_argument("--wear", type=float, help="wear fraction applied to every seal")
    p.add_argument("--frequent-only", type=int, metavar="MIN", nargs="?", const=50,
                   help="draw only classes with at least MIN bundled samples (default 50)")
    p.add_argument("--emit-templates", action="store_true", help="also write templates.npz built from the corpus")
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("folds", help="build a seal-level fold plan")
    p.add_argument("--corpus", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--side", default="reverse", help="side to select, or 'all'")
    p.add_argument("--out", required=True, help="fold plan JSON path")

    for name, what in (("detect-eval", "detection"), ("classify-eval", "classification")):
        p = sub.add_parser(name, help=f"cross-validated {what} metrics")
        _run_options(p)
        p.add_argument("--fold", type=int, help="evaluate one fold only (0-based)")

    p = sub.add_parser("transcribe", help="transcribe one seal image")
    p.add_argument("--image", required=True)
    p.add_argument("--backend", choices=["baseline", "external"], default="baseline")
    p.add_argument("--templates", help="directory with templates.npz, or a corpus to build them from")
    p.add_argument("--detector-command")
    p.add_argument("--classifier-command")
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--conf-threshold", type=float, default=0.25)
    p.add_argument("--nms-threshold", type=float, default=0.45)

    p = sub.add_parser("cross-validate", help="run the full pipeline under k-fold cross-validation")
    _run_options(p)

    p = sub.add_parser("report", help="re-render a stored report")
    p.add_argument("--run", required=True, help="run directory or report.json")
    p.add_argument("--out", help="directory to write into (default: the run directory)")
    return ap


# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    from .synthseal import CorpusConfig, generate_corpus

    cfg = CorpusConfig.load(args.config) if args.config else CorpusConfig()
    if args.wear is not None:
        cfg = replace(cfg, degradation=replace(cfg.degradation, wear_fraction=args.wear))
    if args.frequent_only is not None:
        names = {c.name for c in classification_subset(default_registry(), SAMPLE_COUNTS, args.frequent_only)}
        cfg = replace(cfg, class_weights={k: v for k, v in cfg.weights().items() if k in names})
    manifest, _ = generate_corpus(cfg, args.n, args.seed, out_dir=args.out, jobs=args.jobs)
    if args.emit_templates:
        bank = build_templates(manifest.seals, manifest.load_image)
        bank.save(Path(args.out))
    print(f"wrote {len(manifest.seals)} seals to {args.out}")
    return 0


def cmd_folds(args) -> int:
    manifest = load_manifest(args.corpus)
    side = None if args.side == "all" else args.side
    plan = make_folds(manifest, args.k, args.seed, side_filter=side)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(plan.to_dict(), indent=1) + "\n", encoding="utf-8")
    print(" ".join(str(len(f)) for f in plan.folds))
    return 0


def _plan(args, manifest, config: RunConfig) -> FoldPlan | None:
    if args.plan:
        return FoldPlan.from_dict(json.loads(Path(args.plan).read_text(encoding="utf-8")))
    return None


def cmd_cross_validate(args) -> int:
    config = build_config(args)
    manifest = load_manifest(args.corpus)
    report = cross_validate(manifest, config, plan=_plan(args, manifest, config))
    if args.out:
        emit_report(report, args.out)
    print(render_tables(report))
    return 2 if report.overall["n_seals"] == report.overall["n_failed"] else 0


def _stage_eval(args, stage: str) -> int:
    config = build_config(args)
    manifest = load_manifest(args.corpus)
    plan = _plan(args, manifest, config) or make_folds(manifest, config.k, config.seed, side_filter=config.side)
    if args.fold is not None:
        classes = active_classes(manifest, config)
        report = CVReport(config.to_dict(), classes, plan.to_dict(),
                          [run_fold(manifest, plan, args.fold, config, classes)])
    else:
        report = cross_validate(manifest, config, plan=plan)
    if args.out:
        emit_report(report, args.out)
    rows = [(str(f.fold_index + 1), getattr(f, stage)) for f in report.folds]
    ov = report.overall[stage]
    if stage == "detection":
        print(detection_table([(None, ov)]))
        print(detection_table(rows))
    else:
        print(classification_table([(None, ov)]))
        print(classification_table(rows))
        if ov["per_class_mean_acc"] is not None:
            print(f"Mean per-class accuracy: {100 * ov['per_class_mean_acc']:.2f}")
    return 0


def _load_bank(path: str) -> TemplateBank:
    p = Path(path)
    if (p / "templates.npz").exists() or p.suffix == ".npz":
        return TemplateBank.load(p)
    if (p / "manifest.json").exists() or p.suffix == ".json":
        manifest = load_manifest(p)
        return build_templates(manifest.seals, manifest.load_image)
    raise FileNotFoundError(f"{path}: neither templates.npz nor a corpus manifest")


def cmd_transcribe(args) -> int:
    image = read_image(args.image)
    registry = default_registry()
    if args.backend == "baseline":
        if not args.templates:
            raise UsageError("--backend baseline needs --templates")
        detector = classifier = BaselineBackend(bank=_load_bank(args.templates))
    else:
        if not (args.detector_command and args.classifier_command):
            raise UsageError("--backend external needs --detector-command and --classifier-command")
        detector = make_backend("external", args.detector_command, args.timeout, "detect")
        classifier = make_backend("external", args.classifier_command, args.timeout, "classify")
        detector.fit([], None, [], 0)
        classifier.fit([], None, [], 0)  # no subset given: adopt the classes the model declares
    try:
        dets = detect(detector, image, None, args.conf_threshold, args.nms_threshold)
        kept, crops = [], []
        for d in dets:
            c = crop_box(image, d.bbox, 0.1, 256)
            if c is not None:
                kept.append(d)
                crops.append(c)
        scores = classify(classifier, crops, None, [d.bbox for d in kept])
    finally:
        detector.close()
        classifier.close()
    trans = transcribe([LabeledDetection(d, s) for d, s in zip(kept, scores)])
    for line in render_text(trans.lines, registry):
        print(line)
    return 0


def cmd_report(args) -> int:
    report = CVReport.load(args.run)
    run = Path(args.run)
    out = Path(args.out) if args.out else (run if run.is_dir() else run.parent)
    emit_report(report, out)
    print(render_tables(report))
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "folds": cmd_folds,
    "detect-eval": lambda a: _stage_eval(a, "detection"),
    "classify-eval": lambda a: _stage_eval(a, "classification"),
    "transcribe": cmd_transcribe,
    "cross-validate": cmd_cross_validate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sealread: error: {exc}", file=sys.stderr)
        return 1
    except InferenceError as exc:
        print(f"sealread: backend error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError, json.JSONDecodeError) as exc:
        # manifest, fold, subset, config and report errors all derive from ValueError
        print(f"sealread: invalid input: {exc}", file=sys.stderr)
        return 1
    except (OSError, RuntimeError, AssertionError) as exc:
        # AssertionError: the train/test leakage guard
        print(f"sealread: runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
