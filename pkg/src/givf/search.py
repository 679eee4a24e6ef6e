"""Query-time machinery: region selection, group pruning, compressed scans.

The scan order is fully deterministic: candidate groups are ranked by a score
that equals the exact squared distance from the query to the group anchor
(thanks to the precomputed norm terms), ties broken by region rank then group
index, and the code scan walks that order until the candidate budget is spent.
Reported distances come from the expanded form
    (1 - a) |q - c|^2 + a |q - s|^2 - 2 <q, r> + const
whose constant is stored per point as one quantized byte.
"""

import struct
import time
from dataclasses import dataclass
from hashlib import blake2b

import numpy as np

from .pq import build_lookup_table, lookup_code_sums
from .util import concat_ranges


@dataclass(frozen=True)
class SearchParams:
    nprobe: int = 32  # regions to visit
    tau: float = 1.0  # fraction of candidate groups kept by pruning
    candidates: int = 10_000  # max codes scanned per query
    ef_search: int = 128  # beam width for region selection
    rerank: bool = True  # sort scanned codes by estimated distance
    prune: bool = True  # False disables group selection entirely


@dataclass
class SearchStats:
    regions_visited: int = 0
    subregions_visited: int = 0
    subregions_pruned: int = 0
    codes_scanned: int = 0
    wall_time_s: float = 0.0


@dataclass
class SearchResult:
    ids: np.ndarray  # (r,) int32
    distances: np.ndarray  # (r,) float32
    stats: SearchStats

    def signature(self) -> str:
        """Content hash of everything except wall time; equal runs match."""
        h = blake2b(digest_size=16)
        h.update(np.ascontiguousarray(self.ids, dtype="<i4").tobytes())
        h.update(np.ascontiguousarray(self.distances, dtype="<f4").tobytes())
        s = self.stats
        h.update(
            struct.pack(
                "<4q",
                s.regions_visited,
                s.subregions_visited,
                s.subregions_pruned,
                s.codes_scanned,
            )
        )
        return h.hexdigest()


def _check_params(index, params):
    if not 1 <= params.nprobe <= index.k:
        raise ValueError(f"need 1 <= nprobe <= {index.k}, got {params.nprobe}")
    if not 0.0 < params.tau <= 1.0:
        raise ValueError(f"need 0 < tau <= 1, got {params.tau}")
    if params.candidates < 1:
        raise ValueError(f"need candidates >= 1, got {params.candidates}")
    if params.ef_search < 1:
        raise ValueError(f"need ef_search >= 1, got {params.ef_search}")


def _select_regions(index, q, params):
    """Top nprobe regions as (ids, exact squared centroid distances)."""
    c = index.coarse.centroids
    if params.nprobe == index.k:
        # visiting everything: rank regions exactly, no graph involved
        d = np.einsum("kd,kd->k", c - q, c - q, dtype=np.float64)
        order = np.lexsort((np.arange(index.k), d))[: params.nprobe]
        return order.astype(np.int64), d[order]
    from .graph import search_graph

    ids, _ = search_graph(index.graph, q, params.nprobe, params.ef_search)
    ids = ids.astype(np.int64)
    diff = c[ids].astype(np.float64) - q
    return ids, np.einsum("pd,pd->p", diff, diff)


def search(index, query, params: SearchParams):
    """Run one query; returns SearchResult with ids/distances/stats.

    With rerank=True results are sorted by (estimated distance, id) and
    distances hold the per-point estimates. With rerank=False points stay in
    scan order and each carries its group's anchor distance instead.
    """
    q = np.asarray(query, dtype=np.float32).reshape(-1)
    if q.shape[0] != index.dim:
        raise ValueError(f"query dim {q.shape[0]} != index dim {index.dim}")
    _check_params(index, params)
    t0 = time.perf_counter()

    regions, qc2 = _select_regions(index, q, params)
    p = regions.shape[0]
    groups = index.groups_per_region
    c = index.coarse.centroids

    if index.params.grouping:
        nb = index.neighbor_ids[regions]
        uq, inv = np.unique(nb.ravel(), return_inverse=True)
        diff = c[uq].astype(np.float64) - q
        qs2 = np.einsum("ud,ud->u", diff, diff)[inv].reshape(p, groups)
        a = index.alphas[regions].astype(np.float64)[:, None]
        base_terms = (1.0 - a) * qc2[:, None] + a * qs2
        scores = base_terms + index.norm_terms[regions]
    else:
        base_terms = qc2[:, None]
        scores = base_terms

    flat_scores = scores.ravel()
    total = flat_scores.shape[0]
    pos_idx = np.repeat(np.arange(p), groups)
    grp_idx = np.tile(np.arange(groups), p)
    order = np.lexsort((grp_idx, pos_idx, flat_scores))
    kept = int(np.ceil(params.tau * total)) if params.prune else total
    sel = order[:kept]

    sizes = index.group_sizes[regions].ravel()[sel].astype(np.int64)
    starts = index.group_starts[regions].ravel()[sel]
    prefix = np.cumsum(sizes) - sizes
    budget = params.candidates
    lengths = np.clip(budget - prefix, 0, sizes)
    begun = prefix < budget

    rows = concat_ranges(starts, lengths)
    scanned = rows.shape[0]
    pids = index.point_ids[rows]
    ip = lookup_code_sums(build_lookup_table(index.pq, q, "inner"), index.codes[rows])
    const = index.const_quant.table().astype(np.float64)[index.const_bytes[rows]]
    per_group_base = base_terms.ravel()[sel]
    dist = (
        np.repeat(per_group_base, lengths)
        - 2.0 * ip.astype(np.float64)
        + const
    ).astype(np.float32)

    stats = SearchStats(
        regions_visited=p,
        subregions_visited=int(begun.sum()),
        subregions_pruned=total - kept,
        codes_scanned=scanned,
    )
    if params.rerank:
        fin = np.lexsort((pids, dist))
        ids_out, dists_out = pids[fin], dist[fin]
    else:
        ids_out = pids
        dists_out = np.repeat(flat_scores[sel], lengths).astype(np.float32)
    stats.wall_time_s = time.perf_counter() - t0
    return SearchResult(ids=ids_out, distances=dists_out, stats=stats)


def decomposed_distance(query, centroid, neighbor, alpha, code, tables, const_term):
    """Reference evaluation of the expanded distance form for one point.

    tables must be an inner-product lookup table for the index's codebooks;
    const_term is the point's stored constant (dequantized or exact). Float64
    throughout; the batched scan must agree with this to float32 precision.
    """
    if tables.mode != "inner":
        raise ValueError("decomposed_distance needs an inner-product table")
    q = np.asarray(query, dtype=np.float64)
    c = np.asarray(centroid, dtype=np.float64)
    s = np.asarray(neighbor, dtype=np.float64)
    a = float(alpha)
    m = tables.entries.shape[0]
    ip = float(tables.entries[np.arange(m), np.asarray(code)].sum(dtype=np.float64))
    qc2 = float(((q - c) ** 2).sum())
    qs2 = float(((q - s) ** 2).sum())
    return (1.0 - a) * qc2 + a * qs2 - 2.0 * ip + float(const_term)


def recall_at_r(results, truth, r):
    """Fraction of queries whose true nearest neighbor appears in the top r.

    results: list of SearchResult (or raw id arrays); truth: (nq,) or (nq, k)
    ids whose first column is the true nearest neighbor.
    """
    truth = np.asarray(truth)
    if truth.ndim == 2:
        truth = truth[:, 0]
    if len(results) != truth.shape[0]:
        raise ValueError("results/truth length mismatch")
    hits = 0
    for res, t in zip(results, truth):
        ids = getattr(res, "ids", res)
        hits += int(np.any(ids[:r] == t))
    return hits / max(len(results), 1)


@dataclass
class SweepRow:
    nprobe: int
    tau: float
    candidates: int
    r: int
    recall: float
    latency_ms: float
    codes_scanned: float


def sweep(index, queries, truth, grid, r_values=(1, 10, 100), latency_runs=1):
    """Run a parameter grid; one SweepRow per (params, r) pair.

    latency_runs > 1 reports the per-query median over that many repeats;
    latency_runs == 0 skips timing (latency reported as 0) so runs can be
    compared byte for byte.
    """
    queries = np.asarray(queries, dtype=np.float32)
    rows = []
    for params in grid:
        results = []
        lat = []
        for qi in range(queries.shape[0]):
            reps = max(1, latency_runs)
            times = np.empty(reps, dtype=np.float64)
            for t in range(reps):
                res = search(index, queries[qi], params)
                times[t] = res.stats.wall_time_s
            results.append(res)
            lat.append(float(np.median(times)))
        latency_ms = float(np.mean(lat)) * 1e3 if latency_runs > 0 else 0.0
        codes = float(np.mean([r.stats.codes_scanned for r in results]))
        for r in r_values:
            rows.append(
                SweepRow(
                    nprobe=params.nprobe,
                    tau=params.tau,
                    candidates=params.candidates,
                    r=r,
                    recall=recall_at_r(results, truth, r),
                    latency_ms=latency_ms,
                    codes_scanned=codes,
                )
            )
    return rows


def write_sweep_csv(rows, path):
    lines = ["nprobe,tau,candidates,R,recall,latency_ms,codes_scanned"]
    for row in rows:
        lines.append(
            f"{row.nprobe},{row.tau:g},{row.candidates},{row.r},"
            f"{row.recall:.6f},{row.latency_ms:.4f},{row.codes_scanned:.1f}"
        )
    data = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8") as f:
        f.write(data)
    return data


def verify_results(results):
    """Sanity checks on a batch of results; raises InvariantError on failure."""
    from .errors import InvariantError

    for i, res in enumerate(results):
        ids = res.ids
        if ids.shape[0] != np.unique(ids).shape[0]:
            raise InvariantError(f"query {i}: duplicate ids in results")
        d = res.distances
        if d.shape[0] > 1 and np.any(np.diff(d) < 0):
            raise InvariantError(f"query {i}: distances not sorted")
        if res.stats.codes_scanned != ids.shape[0]:
            raise InvariantError(f"query {i}: codes_scanned != result length")
    return True
