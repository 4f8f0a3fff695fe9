"""Generate a clean synthetic corpus and cross-validate the template baseline on it.

    python scripts/run_baseline_cv.py --n 30 --k 5 --out runs/baseline
"""

import argparse
import logging
import time
from pathlib import Path

from sealread.alphabet import SAMPLE_COUNTS, classification_subset, default_registry
from sealread.harness import RunConfig, cross_validate, emit_report, render_tables
from sealread.synthseal import CorpusConfig, generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--seed", type=int, default=606)
    ap.add_argument("--all-classes", action="store_true",
                    help="draw from every class, not only those with >= 50 bundled samples")
    ap.add_argument("--jobs", type=int, default=4)
    ap.add_argument("--out", default="runs/baseline")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    cfg = CorpusConfig()
    if not args.all_classes:
        keep = {c.name for c in classification_subset(default_registry())}
        cfg = CorpusConfig(class_weights={k: v for k, v in SAMPLE_COUNTS.items() if k in keep})
    out = Path(args.out)
    manifest, _ = generate_corpus(cfg, args.n, args.seed, out_dir=out / "corpus", jobs=args.jobs)

    t0 = time.perf_counter()
    run = RunConfig(k=args.k, seed=args.seed, subset_counts="fixture", jobs=args.jobs)
    report = cross_validate(manifest, run)
    emit_report(report, out)
    print(render_tables(report))
    print(f"{args.n} seals, k={args.k}: {time.perf_counter() - t0:.1f} s")


if __name__ == "__main__":
    main()
