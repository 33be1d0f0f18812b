#!/usr/bin/env python3
"""End-to-end benchmark experiment: generate the synthetic multi-subject
dataset, run the full leave-one-subject-out comparison, and emit the
post-hoc analyses (perturbation curve, cross-subject exchange, channel
weights, validation-test gap) for the FWET model of one fold.

Usage:
    python scripts/run_benchmark.py --out runs/demo [--seed 0] [--workers 4]
        [--algorithms knn,rr,agg,fw-agg,et,fwet] [--repeats 1]
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from eegdg import cli  # noqa: E402


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--algorithms", default="knn,rr,agg,fw-agg,et,fwet")
    parser.add_argument("--repeats", type=int, default=1)
    args = parser.parse_args()

    out = args.out
    common = ["--seed", str(args.seed), "--workers", str(args.workers)]

    print("== generating synthetic benchmark ==")
    code = cli.main(common + ["--out", str(out / "data"), "synth"])
    if code:
        return code

    print("== leave-one-subject-out evaluation ==")
    code = cli.main(common + ["--out", str(out / "loso"), "loso",
                              "--data-dir", str(out / "data"),
                              "--algorithms", args.algorithms,
                              "--repeats", str(args.repeats)])
    if code:
        return code
    print((out / "loso" / "summary.json").read_text())

    target = "s00"
    for which in ("perturb", "crossapply", "weights", "valgap"):
        print(f"== analysis: {which} ==")
        code = cli.main(common + ["--out", str(out / which), "analyze",
                                  "--which", which,
                                  "--checkpoint-dir", str(out / "loso"),
                                  "--data-dir", str(out / "data"),
                                  "--algorithm", "fwet",
                                  "--target", target])
        if code:
            return code
    print(f"done; outputs under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
