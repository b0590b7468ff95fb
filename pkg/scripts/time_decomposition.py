"""Compute vs communication time per phase for each training mode.

    python3 scripts/time_decomposition.py --density 1.0 --features 1000 --out time.csv
"""
import argparse
import csv
import sys

from blockboost.comms import PHASES
from blockboost.datamatrix import quantize_matrix
from blockboost.synthetic import make_synthetic
from blockboost.trainer import TrainConfig, train

MODES = {
    "single": dict(mode="single"),
    "row": dict(mode="row", rows=12),
    "block": dict(mode="block", rows=3, cols=3, servers=3),
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=2000)
    p.add_argument("--features", type=int, default=1000)
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--seed", type=int, default=2)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)

    q = quantize_matrix(make_synthetic(args.rows, args.features, args.density, seed=args.seed), 255)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh)
    w.writerow(("mode", "phase", "compute_us", "comm_us", "bytes"))
    for name, kw in MODES.items():
        res = train(TrainConfig(rounds=args.rounds, threads=args.threads, **kw), q)
        for phase in PHASES:
            w.writerow((name, phase, f"{res.compute_us(phase):.0f}", f"{res.comm_us(phase):.0f}",
                        res.ledger.total_bytes(phase)))
        fh.flush()


if __name__ == "__main__":
    main()
