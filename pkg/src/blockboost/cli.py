"""Command line: ``blockboost run | compare | gen-synthetic``."""
from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import asdict
from pathlib import Path

from .comms import PHASES, threads_from_env
from .datamatrix import load_libsvm, quantize_matrix, sample_rows
from .errors import BlockBoostError, ConfigError
from .synthetic import gen_synthetic
from .trainer import METRIC_COLUMNS, TrainConfig, TrainResult, train
from .treemodel import dump_model

# config keys that may differ between two runs being compared
_LAYOUT_KEYS = {"mode", "rows", "cols", "servers", "workers", "threads", "max_dense_bytes"}


def build_report(result: TrainResult, data_info: dict) -> dict:
    cfg = result.config
    ledger = result.ledger
    totals = ledger.phase_totals()
    deterministic = cfg.deterministic
    for phase in PHASES:
        totals[phase]["compute_us"] = 0.0 if deterministic else result.compute_us(phase)
        totals[phase]["comm_us"] = 0.0 if deterministic else result.comm_us(phase)
        if deterministic:
            totals[phase]["wall_time_us"] = 0.0
    hist = totals["histogram"]["bytes"]
    dense = result.dense_equivalent_hist_bytes
    return {
        "config": asdict(cfg),
        "data": data_info,
        "iterations": [asdict(m) | ({"compute_us": 0.0, "comm_us": 0.0} if deterministic else {})
                       for m in result.metrics],
        "phase_totals": totals,
        "total_bytes": ledger.total_bytes(),
        "histogram_comparison": {
            "mode": cfg.mode,
            "hist_bytes": hist,
            "hist_header_bytes": totals["histogram"]["header_bytes"],
            "hist_payload_bytes": totals["histogram"]["payload_bytes"],
            "dense_allreduce_equivalent_bytes": dense,
            "dense_over_actual": (dense / hist) if hist else None,
        },
        "time_decomposition": {
            "compute_us": 0.0 if deterministic else result.compute_us(),
            "comm_us": 0.0 if deterministic else result.comm_us(),
        },
    }


def _write_metrics(result: TrainResult, path: Path, zero_times: bool) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRIC_COLUMNS)
        for m in result.metrics:
            row = asdict(m)
            if zero_times:
                row["compute_us"] = row["comm_us"] = 0
            else:
                row["compute_us"] = round(row["compute_us"], 3)
                row["comm_us"] = round(row["comm_us"], 3)
            w.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in METRIC_COLUMNS])


def _write_timings(result: TrainResult, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["phase", "compute_us", "comm_us"])
        for phase in PHASES:
            w.writerow([phase, round(result.compute_us(phase), 3), round(result.comm_us(phase), 3)])


def cmd_run(args) -> int:
    matrix = load_libsvm(args.data, num_features=args.num_features)
    matrix = sample_rows(matrix, args.sample, args.seed)
    q = quantize_matrix(matrix, args.buckets)
    rows = args.rows if args.rows is not None else 1
    cols = args.cols if args.cols is not None else 1
    config = TrainConfig(
        rounds=args.rounds, max_depth=args.max_depth, num_buckets=args.buckets,
        learning_rate=args.eta, reg_lambda=args.reg_lambda, min_gain=args.min_gain,
        min_child_weight=args.min_child_weight, mode=args.mode, rows=rows, cols=cols,
        servers=args.servers, workers=args.workers, deterministic=args.deterministic,
        seed=args.seed, threads=threads_from_env(),
    )
    config.validate()
    result = train(config, q)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    zero = config.deterministic
    _write_metrics(result, out / "metrics.csv", zero)
    result.ledger.to_csv(out / "ledger.csv", zero_times=zero)
    _write_timings(result, out / "timings.csv")
    (out / "model.json").write_text(dump_model(result.ensemble))
    info = {"path": str(args.data), "num_rows": q.num_rows, "num_features": q.num_features,
            "nnz": q.nnz, "sample": args.sample}
    report = build_report(result, info)
    (out / "report.json").write_text(json.dumps(report, indent=1, sort_keys=False) + "\n")
    last = result.metrics[-1]
    print(f"{config.mode}: {len(result.ensemble.trees)} trees, logloss={last.logloss:.6f}, "
          f"hist_bytes={report['histogram_comparison']['hist_bytes']}, out={out}")
    return 0


def _ratio(a, b) -> float | None:
    if a is None or b is None:
        return None
    if b == 0:
        return 1.0 if a == 0 else math.inf
    return a / b


def compare_reports(a: dict, b: dict) -> dict:
    """Side-by-side comparison; raises ConfigError when training configs differ."""
    ca = {k: v for k, v in a["config"].items() if k not in _LAYOUT_KEYS}
    cb = {k: v for k, v in b["config"].items() if k not in _LAYOUT_KEYS}
    diff = {k: (ca.get(k), cb.get(k)) for k in sorted(set(ca) | set(cb)) if ca.get(k) != cb.get(k)}
    if a.get("data", {}).get("path") != b.get("data", {}).get("path"):
        diff["data"] = (a.get("data", {}).get("path"), b.get("data", {}).get("path"))
    if diff:
        listing = ", ".join(f"{k}: {x!r} != {y!r}" for k, (x, y) in diff.items())
        raise ConfigError(f"reports differ in training config: {listing}")

    # the dense side is the row-mode run when exactly one of them is
    dense, sparse = a, b
    if a["config"]["mode"] != "row" and b["config"]["mode"] == "row":
        dense, sparse = b, a
    fields = {}
    for phase in PHASES:
        for key in ("bytes", "compute_us", "comm_us"):
            x = dense["phase_totals"][phase][key]
            y = sparse["phase_totals"][phase][key]
            fields[f"{phase}.{key}"] = (x, y, _ratio(x, y))
    fields["total_bytes"] = (dense["total_bytes"], sparse["total_bytes"],
                             _ratio(dense["total_bytes"], sparse["total_bytes"]))
    for key in ("compute_us", "comm_us"):
        x, y = dense["time_decomposition"][key], sparse["time_decomposition"][key]
        fields[f"time.{key}"] = (x, y, _ratio(x, y))
    hx = dense["phase_totals"]["histogram"]["bytes"]
    hy = sparse["phase_totals"]["histogram"]["bytes"]
    return {
        "dense_mode": dense["config"]["mode"],
        "sparse_mode": sparse["config"]["mode"],
        "dense_hist_bytes": hx,
        "sparse_hist_bytes": hy,
        "hist_ratio": _ratio(hx, hy),
        "fields": fields,
    }


def format_comparison(cmp: dict) -> str:
    lines = [f"field,{cmp['dense_mode']},{cmp['sparse_mode']},ratio"]
    for name, (x, y, r) in cmp["fields"].items():
        lines.append(f"{name},{x},{y},{r}")
    lines.append(f"hist_ratio,{cmp['dense_hist_bytes']},{cmp['sparse_hist_bytes']},{cmp['hist_ratio']}")
    return "\n".join(lines)


def _load_report(path) -> dict:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return json.loads(p.read_text())


def cmd_compare(args) -> int:
    cmp = compare_reports(_load_report(args.a), _load_report(args.b))
    text = format_comparison(cmp)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return 0


def cmd_gen(args) -> int:
    m = gen_synthetic(args.rows, args.features, args.density, args.seed, args.out)
    print(f"wrote {m.num_rows} rows, {m.num_features} features, {m.nnz} nonzeros to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="blockboost", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one configuration and write its artifacts")
    run.add_argument("--data", required=True)
    run.add_argument("--mode", choices=("single", "row", "block"), default="block")
    run.add_argument("--rows", type=int, default=None, help="row blocks R")
    run.add_argument("--cols", type=int, default=None, help="column blocks C")
    run.add_argument("--servers", type=int, default=1)
    run.add_argument("--workers", type=int, default=None, help="expected R*C")
    run.add_argument("--rounds", type=int, default=20)
    run.add_argument("--max-depth", type=int, default=6)
    run.add_argument("--buckets", type=int, default=255)
    run.add_argument("--eta", type=float, default=0.3)
    run.add_argument("--lambda", dest="reg_lambda", type=float, default=1.0)
    run.add_argument("--min-gain", type=float, default=0.0)
    run.add_argument("--min-child-weight", type=float, default=1.0)
    run.add_argument("--sample", type=int, default=None, help="train on a random row subsample")
    run.add_argument("--deterministic", action="store_true")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", required=True)
    run.add_argument("--num-features", type=int, default=None)
    run.set_defaults(func=cmd_run)

    cmp = sub.add_parser("compare", help="compare two run outputs (dirs or report.json)")
    cmp.add_argument("a")
    cmp.add_argument("b")
    cmp.add_argument("--out", default=None)
    cmp.set_defaults(func=cmd_compare)

    gen = sub.add_parser("gen-synthetic", help="write a synthetic LIBSVM file")
    gen.add_argument("--rows", type=int, required=True)
    gen.add_argument("--features", type=int, required=True)
    gen.add_argument("--density", type=float, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run":
        if args.mode == "row" and args.cols not in (None, 1):
            parser.error("--mode row requires --cols 1")
        if args.mode == "single" and ((args.rows or 1) != 1 or (args.cols or 1) != 1):
            parser.error("--mode single takes no --rows/--cols")
    if args.command == "gen-synthetic" and not 0.0 < args.density <= 1.0:
        parser.error("--density must be in (0, 1]")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"blockboost: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"blockboost: I/O error: {exc}", file=sys.stderr)
        return 3
    except BlockBoostError as exc:
        print(f"blockboost: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
