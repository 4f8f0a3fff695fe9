"""Baseline CER as glyph wear grows, on one seeded corpus.

    python scripts/degradation_sweep.py --wear 0 0.2 0.4 0.6 --n 30 --k 5
"""

import argparse
import csv
import sys
import tempfile
from dataclasses import replace

from sealread.alphabet import SAMPLE_COUNTS, classification_subset, default_registry
from sealread.harness import RunConfig, cross_validate
from sealread.synthseal import CorpusConfig, DegradationParams, generate_corpus


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--wear", type=float, nargs="+", default=[0.0, 0.2, 0.4])
    ap.add_argument("--occlusions", type=int, default=0, help="occluding blotches per seal")
    ap.add_argument("--n", type=int, default=30)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--seed", type=int, default=606)
    ap.add_argument("--jobs", type=int, default=4)
    args = ap.parse_args()

    keep = {c.name for c in classification_subset(default_registry())}
    base = CorpusConfig(class_weights={k: v for k, v in SAMPLE_COUNTS.items() if k in keep})
    w = csv.writer(sys.stdout)
    w.writerow(["wear", "occlusions", "cer", "map50", "recall", "top1"])
    for wear in args.wear:
        cfg = replace(base, degradation=DegradationParams(wear_fraction=wear, occlusion_discs=args.occlusions))
        with tempfile.TemporaryDirectory() as tmp:
            manifest, _ = generate_corpus(cfg, args.n, args.seed, out_dir=tmp, jobs=args.jobs)
            run = RunConfig(k=args.k, seed=args.seed, subset_counts="fixture", jobs=args.jobs)
            ov = cross_validate(manifest, run).overall
        w.writerow([wear, args.occlusions, f"{ov['cer']:.4f}", f"{ov['detection']['map50']:.4f}",
                    f"{ov['detection']['recall']:.4f}", f"{ov['classification']['top1']:.4f}"])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
