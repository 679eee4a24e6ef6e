#!/usr/bin/env python3
"""Generate a desk-scale clustered dataset with exact ground truth.

Base, training, and query vectors are drawn in one pass from the same cluster
centers and then split, so the training set genuinely resembles the base
distribution. Outputs base.fvecs, learn.fvecs, query.fvecs, gt.ivecs.
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

import numpy as np

from givf.datasets import exact_ground_truth, synth_clustered
from givf.vecio import write_vecs


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out-dir", default="data")
    ap.add_argument("--n-base", type=int, default=200_000)
    ap.add_argument("--n-learn", type=int, default=50_000)
    ap.add_argument("--n-query", type=int, default=1_000)
    ap.add_argument("--dim", type=int, default=32)
    ap.add_argument("--clusters", type=int, default=1_000)
    ap.add_argument("--spread", type=float, default=0.5)
    ap.add_argument("--gt-k", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args()


def main():
    args = parse_args()
    os.makedirs(args.out_dir, exist_ok=True)
    total = args.n_base + args.n_learn + args.n_query
    t0 = time.perf_counter()
    data = synth_clustered(total, args.dim, args.clusters,
                           spread=args.spread, seed=args.seed)
    base = data[: args.n_base]
    learn = data[args.n_base : args.n_base + args.n_learn]
    queries = data[args.n_base + args.n_learn :]
    print(f"drew {total:,} vectors in {time.perf_counter()-t0:.1f}s")

    t0 = time.perf_counter()
    truth = exact_ground_truth(base, queries, k=args.gt_k)
    print(f"exact ground truth in {time.perf_counter()-t0:.1f}s")

    for name, arr in (("base.fvecs", base), ("learn.fvecs", learn),
                      ("query.fvecs", queries)):
        write_vecs(os.path.join(args.out_dir, name), arr)
    write_vecs(os.path.join(args.out_dir, "gt.ivecs"),
               np.asarray(truth, dtype=np.int32))
    print(f"wrote base/learn/query/gt under {args.out_dir}/")


if __name__ == "__main__":
    main()
