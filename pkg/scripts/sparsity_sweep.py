"""Histogram byte ratio (row dense / block sparse) across data densities.

    python3 scripts/sparsity_sweep.py --out sweep.csv
"""
import argparse
import csv
import sys

from blockboost.datamatrix import quantize_matrix
from blockboost.synthetic import make_synthetic
from blockboost.trainer import TrainConfig, train

COLUMNS = ("density", "features", "nnz", "block_hist_bytes", "row_hist_bytes", "ratio")


def sweep(rows, features, densities, rounds, depth, seed):
    for density in densities:
        q = quantize_matrix(make_synthetic(rows, features, density, seed=seed), 255)
        common = dict(rounds=rounds, max_depth=depth, deterministic=True)
        blk = train(TrainConfig(mode="block", rows=3, cols=3, servers=3, **common), q)
        row = train(TrainConfig(mode="row", rows=9, **common), q)
        b, r = blk.ledger.total_bytes("histogram"), row.ledger.total_bytes("histogram")
        yield dict(density=density, features=features, nnz=q.nnz, block_hist_bytes=b,
                   row_hist_bytes=r, ratio=r / b)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--rows", type=int, default=5000)
    p.add_argument("--features", type=int, default=20000)
    p.add_argument("--densities", type=float, nargs="+", default=[1e-4, 1e-3, 1e-2, 1e-1])
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--out", default=None, help="CSV path (stdout if omitted)")
    args = p.parse_args(argv)
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.DictWriter(fh, COLUMNS)
    w.writeheader()
    for rec in sweep(args.rows, args.features, args.densities, args.rounds, args.max_depth, args.seed):
        w.writerow(rec)
        fh.flush()


if __name__ == "__main__":
    main()
