#!/usr/bin/env python3
"""End-to-end desk benchmark: train, build, sweep, report.

Drives the CLI commands against a dataset produced by make_desk_dataset.py.
With --compare-ungrouped a second index is built with grouping disabled and
the recall tables are printed side by side at matched scan budgets.
"""

import argparse
import csv
import io
import os
import sys
from contextlib import redirect_stdout

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from givf.cli import main as givf


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default="data")
    ap.add_argument("--out-dir", default="runs/desk")
    ap.add_argument("--k", type=int, default=1024)
    ap.add_argument("--l", type=int, default=32)
    ap.add_argument("--m", type=int, default=8)
    ap.add_argument("--rotation", action="store_true")
    ap.add_argument("--nprobe-grid", default="2,4,8,16,32,64")
    ap.add_argument("--tau-grid", default="0.5,1.0")
    ap.add_argument("--candidates", type=int, default=10_000)
    ap.add_argument("--r-values", default="1,10,100")
    ap.add_argument("--latency-runs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--compare-ungrouped", action="store_true")
    ap.add_argument("--force", action="store_true",
                    help="retrain and rebuild even if artifacts exist")
    return ap.parse_args()


def run(cmd):
    print("+ givf " + " ".join(cmd))
    rc = givf(cmd)
    if rc != 0:
        sys.exit(rc)


def pipeline(args, out_dir, grouping):
    data = args.data_dir
    common = ["--seed", str(args.seed), "--k", str(args.k), "--l", str(args.l),
              "--m", str(args.m), "--out-dir", out_dir,
              "--grouping" if grouping else "--no-grouping"]
    if args.rotation:
        common.append("--rotation")
    if args.force or not os.path.exists(os.path.join(out_dir, "coarse.fvecs")):
        run(["train", "--learn", os.path.join(data, "learn.fvecs")] + common)
    if args.force or not os.path.exists(os.path.join(out_dir, "index.givf")):
        run(["build", "--base", os.path.join(data, "base.fvecs"),
             "--learn", os.path.join(data, "learn.fvecs")] + common)
    buf = io.StringIO()
    with redirect_stdout(buf):
        run(["eval",
             "--index", os.path.join(out_dir, "index.givf"),
             "--query", os.path.join(data, "query.fvecs"),
             "--gt", os.path.join(data, "gt.ivecs"),
             "--nprobe-grid", args.nprobe_grid,
             "--tau-grid", args.tau_grid,
             "--candidates-grid", str(args.candidates),
             "--r-values", args.r_values,
             "--latency-runs", str(args.latency_runs),
             "--plot"] + common)
    run(["info", "--index", os.path.join(out_dir, "index.givf")])
    return list(csv.DictReader(io.StringIO(buf.getvalue())))


def print_table(rows, label):
    print(f"\n=== {label} ===")
    print(f"{'nprobe':>7} {'tau':>5} {'R':>4} {'recall':>8} {'ms':>8} {'codes':>10}")
    for row in rows:
        print(f"{row['nprobe']:>7} {row['tau']:>5} {row['R']:>4} "
              f"{float(row['recall']):>8.4f} {float(row['latency_ms']):>8.3f} "
              f"{float(row['codes_scanned']):>10.0f}")


def main():
    args = parse_args()
    rows = pipeline(args, args.out_dir, grouping=True)
    print_table(rows, f"grouped index ({args.out_dir}/sweep.csv)")
    if args.compare_ungrouped:
        flat_dir = os.path.join(args.out_dir, "ungrouped")
        flat = pipeline(args, flat_dir, grouping=False)
        print_table(flat, f"ungrouped index ({flat_dir}/sweep.csv)")
        print("\nrecall@R deltas (grouped - ungrouped):")
        for g, u in zip(rows, flat):
            if g["nprobe"] == u["nprobe"] and g["R"] == u["R"] and g["tau"] == u["tau"]:
                d = float(g["recall"]) - float(u["recall"])
                print(f"  nprobe={g['nprobe']:>4} tau={g['tau']} R={g['R']:>4}: {d:+.4f}")


if __name__ == "__main__":
    main()
