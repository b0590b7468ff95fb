"""Per-phase communication (MiB) for block vs row training on one dataset.

Defaults reproduce the high-sparsity acceptance config: 20,000 x 100,000 at
density 1e-4, a 3x3 grid with 3 servers against 12 row workers.

    python3 scripts/comm_savings.py --out comm.csv
"""
import argparse
import csv
import sys

from blockboost.comms import PHASES
from blockboost.datamatrix import load_libsvm, quantize_matrix
from blockboost.synthetic import make_synthetic
from blockboost.trainer import TrainConfig, train

MIB = 2 ** 20


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--data", default=None, help="LIBSVM file; synthetic if omitted")
    p.add_argument("--rows", type=int, default=20_000)
    p.add_argument("--features", type=int, default=100_000)
    p.add_argument("--density", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--rounds", type=int, default=2)
    p.add_argument("--row-workers", type=int, default=12)
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)

    m = load_libsvm(args.data) if args.data else make_synthetic(args.rows, args.features,
                                                               args.density, seed=args.seed)
    q = quantize_matrix(m, 255)
    common = dict(rounds=args.rounds, max_depth=6, deterministic=True)
    runs = {
        "block": train(TrainConfig(mode="block", rows=3, cols=3, servers=3, **common), q),
        "row": train(TrainConfig(mode="row", rows=args.row_workers, **common), q),
    }
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh)
    w.writerow(("mode", "phase", "messages", "bytes", "mib"))
    for mode, res in runs.items():
        totals = res.ledger.phase_totals()
        for phase in PHASES:
            t = totals.get(phase, {"bytes": 0, "messages": 0})
            w.writerow((mode, phase, t["messages"], t["bytes"], f"{t['bytes'] / MIB:.3f}"))
    ratio = runs["row"].ledger.total_bytes("histogram") / runs["block"].ledger.total_bytes("histogram")
    print(f"histogram ratio row/block = {ratio:,.1f}", file=sys.stderr)


if __name__ == "__main__":
    main()
