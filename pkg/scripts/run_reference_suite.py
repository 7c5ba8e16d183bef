"""Train the default ablation suite on the ordering reference over several
seeds and print per-seed and median metrics.

    python scripts/run_reference_suite.py --seeds 0 1 2 --out runs/suite
"""

import argparse
import csv
from pathlib import Path

import numpy as np

from ccl_lab.cli import COMPARE_COLUMNS
from ccl_lab.experiments import DEFAULT_SUITE, ordering_reference, run_variant


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", type=Path, default=Path("runs/suite"))
    args = ap.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    rows = []
    for seed in args.seeds:
        data, cfg, ev = ordering_reference(seed)
        for variant in DEFAULT_SUITE:
            run = run_variant(data, cfg, ev, variant)
            rows.append(run.row())
            print(f"seed {seed:2d}  {variant.name:16s} acc {run.report.verification_accuracy:.4f}  "
                  f"rank-1 {run.report.rank1_rate:.4f}")

    with open(args.out / "suite.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, COMPARE_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)

    print("\nmedian over seeds")
    for variant in DEFAULT_SUITE:
        mine = [r for r in rows if r["name"] == variant.name]
        acc = np.median([r["verification_accuracy"] for r in mine])
        r1 = np.median([r["rank1"] for r in mine])
        print(f"  {variant.name:16s} acc {acc:.4f}  rank-1 {r1:.4f}")


if __name__ == "__main__":
    main()
