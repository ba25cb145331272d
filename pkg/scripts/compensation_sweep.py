"""Adapter compensation after RTN quantization or 2:4 pruning, by adapter rank.

    python scripts/compensation_sweep.py --method rtn --bits 3 --ranks 1 2 4 8
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from obd.config import RunConfig
from obd.pipeline import calibrate, compensation_table


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--method", choices=["rtn", "prune24"], default="rtn")
    parser.add_argument("--bits", type=int, default=3)
    parser.add_argument("--ranks", type=int, nargs="+", default=[1, 2, 4, 8])
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--out", default="results/compensation.csv")
    args = parser.parse_args()

    rows = []
    for seed in range(args.seeds):
        cal = calibrate(RunConfig(seed=seed), keep_traces=False)
        for r in args.ranks:
            table = compensation_table(cal, args.method, r, args.bits)["table"]
            for mode, rec in table.items():
                rows.append((seed, r, mode, rec["eval"]["delta_loss"]))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["seed", "rank", "mode", "delta_loss"])
        writer.writerows(rows)
    modes = sorted({row[2] for row in rows}, key=[r[2] for r in rows].index)
    for r in args.ranks:
        means = {m: np.mean([x[3] for x in rows if x[1] == r and x[2] == m]) for m in modes}
        print(f"rank {r}: " + "  ".join(f"{m} {v:.3f}" for m, v in means.items()))


if __name__ == "__main__":
    main()
