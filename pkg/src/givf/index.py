"""Index construction and memory accounting.

A built index stores, per region: the learned interpolation factor, the ids of
the neighboring centroids that anchor its groups, one precomputed norm term
per group (what makes pruning scores comparable across regions), group sizes,
and the compressed points themselves. Points are laid out contiguously sorted
by (region, group, id), so a search can gather any set of groups with one
index operation.

Compression is product quantization of the displacement from the assigned
anchor; each code carries one extra byte holding the quantized
query-independent part of the expanded distance form.
"""

import time
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grouping import (
    ConstQuantizer,
    learn_alpha,
    neighbor_centroids,
    subcentroids_for_region,
    train_const_quantizer,
)
from .kmeans import GRAPH_ASSIGN_MIN_K, CoarseCodebook, assign_exact
from .pq import PQCodebook, pq_decode, pq_encode, train_pq
from .util import array_hash, as_float_matrix, derive_seed, row_sq_norms, sq_dists

FORMAT_VERSION = 1

_CHUNK = 200_000


@dataclass
class BuildParams:
    l: int
    m: int
    grouping: bool
    rotation: bool
    seed: int
    dataset_hash: int
    version: int = FORMAT_VERSION


@dataclass
class GroupedIndex:
    coarse: CoarseCodebook
    graph: object  # ProximityGraph
    pq: PQCodebook
    const_quant: ConstQuantizer
    params: BuildParams
    alphas: np.ndarray  # (k,) float32
    neighbor_ids: np.ndarray | None  # (k, l) int32, None when grouping off
    norm_terms: np.ndarray | None  # (k, l) float32, None when grouping off
    group_sizes: np.ndarray  # (k, groups) int32
    region_offsets: np.ndarray  # (k + 1,) int64
    point_ids: np.ndarray  # (n,) int32
    codes: np.ndarray  # (n, m) uint8
    const_bytes: np.ndarray  # (n,) uint8

    @property
    def n(self) -> int:
        return self.point_ids.shape[0]

    @property
    def k(self) -> int:
        return self.coarse.k

    @property
    def dim(self) -> int:
        return self.coarse.dim

    @property
    def groups_per_region(self) -> int:
        return self.group_sizes.shape[1]

    @cached_property
    def group_starts(self):
        """Absolute offset of every (region, group) slice into the code arrays."""
        sizes = self.group_sizes.astype(np.int64)
        within = np.cumsum(sizes, axis=1) - sizes
        return self.region_offsets[:-1, None] + within


def _assign_regions(data, coarse, graph, assigner):
    if assigner == "auto":
        assigner = "graph" if coarse.k >= GRAPH_ASSIGN_MIN_K else "exact"
    if assigner == "exact":
        ids, _ = assign_exact(coarse, data, top=1)
        return ids[:, 0]
    if assigner == "graph":
        from .graph import assign_batch

        ids, _ = assign_batch(graph, data, ef=32)
        return ids
    raise ValueError(f"unknown assigner {assigner!r}")


def _region_slices(region_ids, k):
    """Stable sort by region; returns (order, offsets) with offsets (k+1,)."""
    order = np.argsort(region_ids, kind="stable")
    counts = np.bincount(region_ids, minlength=k)
    offsets = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    return order, offsets


def _learn_alphas(learn, region_ids, coarse, neighbor_ids):
    k = coarse.k
    alphas = np.zeros(k, dtype=np.float32)
    order, offsets = _region_slices(region_ids, k)
    c = coarse.centroids
    for r in range(k):
        rows = order[offsets[r] : offsets[r + 1]]
        if rows.size == 0:
            continue
        alphas[r] = learn_alpha(learn[rows], c[r], c[neighbor_ids[r]])
    return alphas


def _pick_groups(data, region_ids, coarse, neighbor_ids, alphas):
    """Group index per point; lowest index wins ties, 0 when alpha is 0."""
    pick = np.zeros(data.shape[0], dtype=np.int32)
    order, offsets = _region_slices(region_ids, coarse.k)
    c = coarse.centroids
    for r in range(coarse.k):
        if alphas[r] == 0.0:
            continue  # all anchors coincide with the centroid, group 0 wins
        rows = order[offsets[r] : offsets[r + 1]]
        if rows.size == 0:
            continue
        anchors = subcentroids_for_region(c[r], c[neighbor_ids[r]], alphas[r])
        d = sq_dists(data[rows], anchors)
        pick[rows] = np.argmin(d, axis=1)
    return pick


def _anchor_rows(coarse, neighbor_ids, alphas, region_ids, pick, grouping):
    """Anchor vector t and |s|^2, alpha per point for a (region, group) stream.

    |s|^2 is accumulated in float64: the query-time scan expands |q - s|^2
    exactly, so the constants must carry the exact norm for the cancellation
    to hold.
    """
    c = coarse.centroids
    c_r = c[region_ids]
    if not grouping:
        z = np.zeros(region_ids.shape[0], dtype=np.float64)
        return c_r, z, np.zeros(region_ids.shape[0], dtype=np.float32)
    s_ids = neighbor_ids[region_ids, pick]
    a = alphas[region_ids]
    t = c_r + a[:, None] * (c[s_ids] - c_r)
    s64 = c[s_ids].astype(np.float64)
    return t, np.einsum("nd,nd->n", s64, s64), a


def _const_terms(points, t, s_sq, alpha, region_ids, coarse, pq, codes):
    """Query-independent constant of the expanded distance form, per point.

    All norms in float64 by difference-free accumulation; see _anchor_rows.
    """
    recon = pq_decode(pq, codes)
    tpr = (t + recon).astype(np.float64)
    c64 = coarse.centroids[region_ids].astype(np.float64)
    c_sq = np.einsum("nd,nd->n", c64, c64)
    a = alpha.astype(np.float64)
    return row_sq_norms(tpr) - (1.0 - a) * c_sq - a * s_sq.astype(np.float64)


def compute_norm_terms(coarse, neighbor_ids, alphas, chunk=512):
    """Per-group constants that turn pruning scores into exact anchor distances."""
    k, l = neighbor_ids.shape
    c = coarse.centroids
    c64 = c.astype(np.float64)
    c_sq = np.einsum("kd,kd->k", c64, c64)
    out = np.empty((k, l), dtype=np.float32)
    for s in range(0, k, chunk):
        e = min(k, s + chunk)
        a = alphas[s:e, None, None].astype(np.float64)
        cc = c[s:e, None, :].astype(np.float64)
        ss = c[neighbor_ids[s:e]].astype(np.float64)
        t = cc + a * (ss - cc)
        t_sq = np.einsum("kld,kld->kl", t, t)
        out[s:e] = (
            t_sq
            - (1.0 - a[:, :, 0]) * c_sq[s:e, None]
            - a[:, :, 0] * c_sq[neighbor_ids[s:e]]
        )
    return out


def prepare_grouping(learn, coarse, graph, l=64, grouping=True, assigner="auto"):
    """Fit the grouping structure on the training set.

    Returns (neighbor_ids, alphas, region_ids, pick); the last two describe
    where each training point landed so later stages reuse the assignment.
    """
    learn = as_float_matrix(learn, "pq_training")
    neighbor_ids = neighbor_centroids(coarse, l) if grouping else None
    region_ids = _assign_regions(learn, coarse, graph, assigner)
    if grouping:
        alphas = _learn_alphas(learn, region_ids, coarse, neighbor_ids)
        pick = _pick_groups(learn, region_ids, coarse, neighbor_ids, alphas)
    else:
        alphas = np.zeros(coarse.k, dtype=np.float32)
        pick = np.zeros(learn.shape[0], dtype=np.int32)
    return neighbor_ids, alphas, region_ids, pick


def train_displacement_pq(
    learn,
    coarse,
    graph,
    l=64,
    m=16,
    grouping=True,
    learn_rotation=False,
    seed=0,
    pq_iters=25,
    rotation_rounds=4,
    assigner="auto",
):
    """Train PQ codebooks on displacement vectors of the training set.

    The training set goes through the same pipeline as the base set later:
    region assignment, alpha learning, group assignment, displacement from the
    anchor. Returns (pq, neighbor_ids, alphas, region_ids, pick).
    """
    learn = as_float_matrix(learn, "pq_training")
    neighbor_ids, alphas, region_ids, pick = prepare_grouping(
        learn, coarse, graph, l=l, grouping=grouping, assigner=assigner
    )
    t, _, _ = _anchor_rows(coarse, neighbor_ids, alphas, region_ids, pick, grouping)
    disp = learn - t
    pq = train_pq(
        disp,
        m,
        iters=pq_iters,
        seed=derive_seed(seed, "pq"),
        learn_rotation=learn_rotation,
        rotation_rounds=rotation_rounds,
    )
    return pq, neighbor_ids, alphas, region_ids, pick


def build_index(
    base,
    coarse,
    graph,
    pq_training,
    l=64,
    m=16,
    learn_rotation=False,
    grouping=True,
    seed=0,
    assigner="auto",
    pq=None,
    pq_iters=25,
    rotation_rounds=4,
    progress=None,
):
    """Assemble a searchable index over the base set.

    pq_training must be held out from base; codebooks, alphas, and the constant
    quantizer are all fit on it, never on base. A pretrained pq can be passed
    to skip codebook training (it must match dim and m).
    """
    base = as_float_matrix(base, "base")
    learn = as_float_matrix(pq_training, "pq_training")
    k, dim = coarse.k, coarse.dim
    if base.shape[1] != dim or learn.shape[1] != dim:
        raise ValueError("base/pq_training dimension does not match the codebook")
    if m <= 0 or dim % m != 0:
        raise ValueError(f"m={m} must divide dim={dim}")
    if grouping and not 0 < l < k:
        raise ValueError(f"need 0 < l < {k} when grouping, got l={l}")
    if pq is not None and (pq.dim != dim or pq.m != m):
        raise ValueError("pretrained pq does not match dim/m")
    say = progress or (lambda msg: None)

    t0 = time.perf_counter()
    if pq is None:
        pq, neighbor_ids, alphas, learn_regions, learn_pick = train_displacement_pq(
            learn,
            coarse,
            graph,
            l=l,
            m=m,
            grouping=grouping,
            learn_rotation=learn_rotation,
            seed=seed,
            pq_iters=pq_iters,
            rotation_rounds=rotation_rounds,
            assigner=assigner,
        )
        say(f"pq trained in {time.perf_counter() - t0:.1f}s")
    else:
        neighbor_ids, alphas, learn_regions, learn_pick = prepare_grouping(
            learn, coarse, graph, l=l, grouping=grouping, assigner=assigner
        )
        say(f"grouping fit in {time.perf_counter() - t0:.1f}s")

    # constant quantizer bounds come from the training set's own constants
    t_l, s_sq_l, a_l = _anchor_rows(
        coarse, neighbor_ids, alphas, learn_regions, learn_pick, grouping
    )
    learn_codes = pq_encode(pq, learn - t_l)
    learn_consts = _const_terms(
        learn, t_l, s_sq_l, a_l, learn_regions, coarse, pq, learn_codes
    )
    const_quant = train_const_quantizer(learn_consts)

    t0 = time.perf_counter()
    region_ids = _assign_regions(base, coarse, graph, assigner)
    if grouping:
        pick = _pick_groups(base, region_ids, coarse, neighbor_ids, alphas)
        groups = l
    else:
        pick = np.zeros(base.shape[0], dtype=np.int32)
        groups = 1
    say(f"base assigned in {time.perf_counter() - t0:.1f}s")

    n = base.shape[0]
    order = np.lexsort((np.arange(n), pick, region_ids))
    point_ids = order.astype(np.int32)
    region_s = region_ids[order]
    pick_s = pick[order]
    group_sizes = (
        np.bincount(region_s.astype(np.int64) * groups + pick_s, minlength=k * groups)
        .reshape(k, groups)
        .astype(np.int32)
    )
    region_offsets = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(group_sizes.sum(axis=1, dtype=np.int64), out=region_offsets[1:])

    t0 = time.perf_counter()
    codes = np.empty((n, m), dtype=np.uint8)
    const_bytes = np.empty(n, dtype=np.uint8)
    for s in range(0, n, _CHUNK):
        e = min(n, s + _CHUNK)
        pts = base[order[s:e]]
        t, s_sq, a = _anchor_rows(
            coarse, neighbor_ids, alphas, region_s[s:e], pick_s[s:e], grouping
        )
        codes[s:e] = pq_encode(pq, pts - t)
        consts = _const_terms(
            pts, t, s_sq, a, region_s[s:e], coarse, pq, codes[s:e]
        )
        const_bytes[s:e] = const_quant.quantize(consts)
    say(f"base encoded in {time.perf_counter() - t0:.1f}s")

    norm_terms = (
        compute_norm_terms(coarse, neighbor_ids, alphas) if grouping else None
    )
    params = BuildParams(
        l=l if grouping else 0,
        m=m,
        grouping=grouping,
        rotation=pq.rotation is not None,
        seed=seed,
        dataset_hash=array_hash(base),
    )
    return GroupedIndex(
        coarse=coarse,
        graph=graph,
        pq=pq,
        const_quant=const_quant,
        params=params,
        alphas=alphas,
        neighbor_ids=neighbor_ids if grouping else None,
        norm_terms=norm_terms,
        group_sizes=group_sizes,
        region_offsets=region_offsets,
        point_ids=point_ids,
        codes=codes,
        const_bytes=const_bytes,
    )


@dataclass
class MemoryReport:
    codebook_bytes: int
    graph_bytes: int
    graph_layer0_bytes: int
    graph_layer0_bound: int
    norm_term_bytes: int
    neighbor_id_bytes: int
    group_table_bytes: int
    alpha_bytes: int
    code_bytes: int
    id_bytes: int

    @property
    def total_bytes(self) -> int:
        return (
            self.codebook_bytes
            + self.graph_bytes
            + self.norm_term_bytes
            + self.neighbor_id_bytes
            + self.group_table_bytes
            + self.alpha_bytes
            + self.code_bytes
            + self.id_bytes
        )

    def as_text(self) -> str:
        rows = [
            ("coarse codebook", self.codebook_bytes),
            ("graph links (all layers)", self.graph_bytes),
            ("  base layer", self.graph_layer0_bytes),
            ("  base layer bound", self.graph_layer0_bound),
            ("group norm terms", self.norm_term_bytes),
            ("group neighbor ids", self.neighbor_id_bytes),
            ("group size tables", self.group_table_bytes),
            ("region alphas", self.alpha_bytes),
            ("point codes", self.code_bytes),
            ("point ids", self.id_bytes),
            ("total", self.total_bytes),
        ]
        width = max(len(name) for name, _ in rows)
        return "\n".join(f"{name:<{width}}  {val:>14,}" for name, val in rows)


def memory_report(index) -> MemoryReport:
    """Byte accounting; codebook/grouping/code fields follow exact formulas."""
    k, dim, n, m = index.k, index.dim, index.n, index.params.m
    l = index.params.l
    per_layer = [
        int((lay.adjacency >= 0).sum()) * 4 for lay in index.graph.layers
    ]
    return MemoryReport(
        codebook_bytes=k * dim * 4,
        graph_bytes=sum(per_layer),
        graph_layer0_bytes=per_layer[0],
        graph_layer0_bound=index.graph.max_links * k * 4,
        norm_term_bytes=k * l * 4 if index.params.grouping else 0,
        neighbor_id_bytes=k * l * 4 if index.params.grouping else 0,
        group_table_bytes=int(index.group_sizes.size) * 4,
        alpha_bytes=k * 4,
        code_bytes=n * (m + 1),
        id_bytes=n * 4,
    )
