"""Command-line interface.

Subcommands cover the full pipeline: gt (exact ground truth), train (coarse
codebook + compression codebooks), build (searchable index file), eval
(parameter sweeps + CSV), search (ad-hoc queries), info (index inspection).

Exit codes: 0 success, 1 bad usage or configuration, 2 I/O or file-format
problems, 3 failed internal self-checks.

Heavy imports are deferred until after --threads is applied so BLAS thread
limits actually take effect.
"""

import argparse
import os
import sys
import time

from .config import (
    FIELD_NAMES,
    RunConfig,
    parse_value,
    resolve_config,
    write_manifest,
)
from .errors import ConfigError, InvariantError, StorageError, VecsFormatError

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

_COMMANDS = ("gt", "train", "build", "eval", "search", "info")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage to 1
        raise ConfigError(message)


def _add_config_flags(sub):
    sub.add_argument("--config", default=None, metavar="FILE")
    for name in FIELD_NAMES:
        flag = "--" + name.replace("_", "-")
        default = getattr(RunConfig(), name)
        if isinstance(default, bool):
            sub.add_argument(flag, dest=name, default=None,
                             action=argparse.BooleanOptionalAction)
        elif name in ("r_values", "nprobe_grid", "tau_grid", "candidates_grid"):
            sub.add_argument(flag, dest=name, default=None,
                             type=lambda s, n=name: parse_value(n, s),
                             metavar="LIST")
        elif isinstance(default, int):
            sub.add_argument(flag, dest=name, default=None, type=int)
        elif isinstance(default, float):
            sub.add_argument(flag, dest=name, default=None, type=float)
        else:
            sub.add_argument(flag, dest=name, default=None)


def build_parser():
    parser = _Parser(prog="givf", description=__doc__.splitlines()[0])
    subs = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        _add_config_flags(subs.add_parser(name))
    return parser


def _say(msg):
    print(msg, file=sys.stderr)


def _require(cfg, *names):
    for name in names:
        if getattr(cfg, name) in (None, ""):
            raise ConfigError(f"this command needs --{name.replace('_', '-')}")


def _load_vectors(path, normalize):
    from .datasets import l2_normalize
    from .vecio import read_vecs

    data = read_vecs(path)
    return l2_normalize(data) if normalize else data


def _atomic_text(path, text):
    tmp = os.fspath(path) + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        f.write(text)
    os.replace(tmp, path)


def cmd_gt(cfg):
    _require(cfg, "base", "query", "gt")
    import numpy as np

    from .datasets import exact_ground_truth
    from .vecio import write_vecs

    base = _load_vectors(cfg.base, cfg.normalize)
    queries = _load_vectors(cfg.query, cfg.normalize)
    t0 = time.perf_counter()
    truth = exact_ground_truth(base, queries, k=cfg.gt_k)
    _say(f"ground truth for {queries.shape[0]} queries in {time.perf_counter()-t0:.1f}s")
    write_vecs(cfg.gt, np.asarray(truth, dtype=np.int32))
    write_manifest(cfg.gt + ".manifest.json", "gt", cfg,
                   {"base": cfg.base, "query": cfg.query}, {"gt": cfg.gt})
    return 0


def _artifact_paths(out_dir):
    return {
        "coarse": os.path.join(out_dir, "coarse.fvecs"),
        "pq": os.path.join(out_dir, "pq.fvecs"),
        "rotation": os.path.join(out_dir, "rotation.fvecs"),
        "index": os.path.join(out_dir, "index.givf"),
    }


def cmd_train(cfg):
    _require(cfg, "learn", "out_dir")
    from .graph import build_graph
    from .index import train_displacement_pq
    from .kmeans import train_kmeans
    from .util import derive_seed
    from .vecio import write_vecs

    os.makedirs(cfg.out_dir, exist_ok=True)
    learn = _load_vectors(cfg.learn, cfg.normalize)
    t0 = time.perf_counter()
    coarse = train_kmeans(learn, cfg.k, iters=cfg.kmeans_iters, seed=cfg.seed,
                          assigner=cfg.assigner)
    _say(f"coarse codebook ({cfg.k} regions) in {time.perf_counter()-t0:.1f}s")
    t0 = time.perf_counter()
    graph = build_graph(coarse, max_links=cfg.max_links,
                        ef_construction=cfg.ef_construction,
                        seed=derive_seed(cfg.seed, "graph"))
    _say(f"assignment graph in {time.perf_counter()-t0:.1f}s")
    t0 = time.perf_counter()
    pq, _, _, _, _ = train_displacement_pq(
        learn, coarse, graph, l=cfg.l, m=cfg.m, grouping=cfg.grouping,
        learn_rotation=cfg.rotation, seed=cfg.seed, pq_iters=cfg.pq_iters,
        rotation_rounds=cfg.rotation_rounds, assigner=cfg.assigner)
    _say(f"compression codebooks in {time.perf_counter()-t0:.1f}s")

    paths = _artifact_paths(cfg.out_dir)
    write_vecs(paths["coarse"], coarse.centroids)
    write_vecs(paths["pq"], pq.codewords.reshape(-1, pq.sub_dim))
    outputs = {"coarse": paths["coarse"], "pq": paths["pq"]}
    if pq.rotation is not None:
        write_vecs(paths["rotation"], pq.rotation)
        outputs["rotation"] = paths["rotation"]
    write_manifest(os.path.join(cfg.out_dir, "train.manifest.json"), "train", cfg,
                   {"learn": cfg.learn}, outputs)
    return 0


def cmd_build(cfg):
    _require(cfg, "base", "learn", "out_dir")
    from .graph import build_graph
    from .index import build_index
    from .kmeans import CoarseCodebook
    from .pq import CODEWORDS, PQCodebook
    from .storage import save_index
    from .util import derive_seed
    from .vecio import read_vecs

    paths = _artifact_paths(cfg.out_dir)
    index_path = cfg.index or paths["index"]
    centroids = read_vecs(paths["coarse"])
    coarse = CoarseCodebook(centroids)
    codewords = read_vecs(paths["pq"])
    dim = coarse.dim
    if codewords.shape != (cfg.m * CODEWORDS, dim // cfg.m):
        raise StorageError(
            f"pq artifact shape {codewords.shape} does not match m={cfg.m} dim={dim}")
    rotation = None
    if os.path.exists(paths["rotation"]):
        rotation = read_vecs(paths["rotation"])
    pq = PQCodebook(codewords=codewords.reshape(cfg.m, CODEWORDS, dim // cfg.m),
                    rotation=rotation)

    base = _load_vectors(cfg.base, cfg.normalize)
    learn = _load_vectors(cfg.learn, cfg.normalize)
    t0 = time.perf_counter()
    graph = build_graph(coarse, max_links=cfg.max_links,
                        ef_construction=cfg.ef_construction,
                        seed=derive_seed(cfg.seed, "graph"))
    _say(f"assignment graph in {time.perf_counter()-t0:.1f}s")
    index = build_index(base, coarse, graph, learn, l=cfg.l, m=cfg.m,
                        grouping=cfg.grouping, seed=cfg.seed,
                        assigner=cfg.assigner, pq=pq, progress=_say)
    size = save_index(index, index_path)
    _say(f"index written: {index_path} ({size:,} bytes)")
    from .index import memory_report

    sys.stdout.write(memory_report(index).as_text() + "\n")
    inputs = {"base": cfg.base, "learn": cfg.learn, "coarse": paths["coarse"],
              "pq": paths["pq"]}
    if rotation is not None:
        inputs["rotation"] = paths["rotation"]
    write_manifest(os.path.join(cfg.out_dir, "build.manifest.json"), "build", cfg,
                   inputs, {"index": index_path})
    return 0


def _search_params(cfg, nprobe=None, tau=None, candidates=None):
    from .search import SearchParams

    return SearchParams(
        nprobe=nprobe if nprobe is not None else cfg.nprobe,
        tau=tau if tau is not None else cfg.tau,
        candidates=candidates if candidates is not None else cfg.candidates,
        ef_search=cfg.ef_search, rerank=cfg.rerank, prune=cfg.prune)


def cmd_eval(cfg):
    _require(cfg, "index", "query", "gt", "out_dir")
    from .search import search, sweep, verify_results, write_sweep_csv
    from .storage import load_index
    from .vecio import read_vecs

    os.makedirs(cfg.out_dir, exist_ok=True)
    index = load_index(cfg.index)
    queries = _load_vectors(cfg.query, cfg.normalize)
    truth = read_vecs(cfg.gt)
    if truth.shape[0] != queries.shape[0]:
        raise ConfigError(
            f"ground truth rows ({truth.shape[0]}) != queries ({queries.shape[0]})")

    grid = [_search_params(cfg, nprobe=np_, tau=tau, candidates=cand)
            for np_ in cfg.nprobe_grid
            for tau in cfg.tau_grid
            for cand in cfg.candidates_grid]
    for params in grid:
        if params.nprobe > index.k:
            raise ConfigError(f"nprobe {params.nprobe} > index regions {index.k}")

    sample = [search(index, queries[i], grid[0])
              for i in range(min(queries.shape[0], 50))]
    verify_results(sample)
    _say(f"self-checks passed on {len(sample)} sample queries")

    t0 = time.perf_counter()
    rows = sweep(index, queries, truth, grid, r_values=cfg.r_values,
                 latency_runs=cfg.latency_runs)
    _say(f"sweep of {len(grid)} grid points in {time.perf_counter()-t0:.1f}s")
    for i in range(0, len(rows), len(cfg.r_values)):
        group = rows[i : i + len(cfg.r_values)]
        if any(a.recall > b.recall for a, b in zip(group, group[1:])):
            raise InvariantError("recall decreased as R grew within one grid point")

    csv_path = os.path.join(cfg.out_dir, "sweep.csv")
    text = write_sweep_csv(rows, csv_path)
    sys.stdout.write(text)
    if cfg.plot:
        plot_path = os.path.join(cfg.out_dir, "recall_vs_nprobe.png")
        _plot_sweep(rows, plot_path)
        _say(f"plot written: {plot_path}")
    write_manifest(os.path.join(cfg.out_dir, "eval.manifest.json"), "eval", cfg,
                   {"index": cfg.index, "query": cfg.query, "gt": cfg.gt},
                   {"sweep": csv_path})
    return 0


def _plot_sweep(rows, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4.5))
    series = {}
    for row in rows:
        series.setdefault((row.tau, row.r), []).append((row.nprobe, row.recall))
    for (tau, r), pts in sorted(series.items()):
        pts.sort()
        ax.plot([p[0] for p in pts], [p[1] for p in pts],
                marker="o", label=f"tau={tau:g} R={r}")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("regions visited (nprobe)")
    ax.set_ylabel("recall")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_search(cfg):
    _require(cfg, "index", "query")
    from .search import search
    from .storage import load_index

    index = load_index(cfg.index)
    queries = _load_vectors(cfg.query, cfg.normalize)
    params = _search_params(cfg)
    lines = []
    for i in range(queries.shape[0]):
        res = search(index, queries[i], params)
        top = min(cfg.top, res.ids.shape[0])
        pairs = " ".join(
            f"{res.ids[j]}:{res.distances[j]:.4f}" for j in range(top))
        lines.append(f"query {i}: {pairs}")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_info(cfg):
    _require(cfg, "index")
    from .index import memory_report
    from .storage import load_index

    index = load_index(cfg.index)
    p = index.params
    lines = [
        f"points           {index.n:,}",
        f"dim              {index.dim}",
        f"regions          {index.k:,}",
        f"groups/region    {index.groups_per_region}",
        f"code bytes       {p.m} + 1",
        f"grouping         {'on' if p.grouping else 'off'}",
        f"rotation         {'on' if p.rotation else 'off'}",
        f"build seed       {p.seed}",
        f"dataset hash     {p.dataset_hash:#018x}",
        "",
        memory_report(index).as_text(),
    ]
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


_HANDLERS = {
    "gt": cmd_gt,
    "train": cmd_train,
    "build": cmd_build,
    "eval": cmd_eval,
    "search": cmd_search,
    "info": cmd_info,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        ns = build_parser().parse_args(argv)
        flags = {name: getattr(ns, name) for name in FIELD_NAMES}
        cfg = resolve_config(file_path=ns.config, flags=flags)
        if cfg.threads > 0:
            for var in _THREAD_VARS:
                os.environ[var] = str(cfg.threads)
        return _HANDLERS[ns.command](cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (VecsFormatError, StorageError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except InvariantError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
