"""Layered proximity graph for approximate nearest-centroid lookup.

Nodes are codebook entries. Node levels are drawn geometrically, searches
descend greedily through the sparse upper layers and run a best-first beam
search on the base layer. Construction inserts nodes one at a time, linking
each to neighbors chosen by the distance heuristic: a candidate is kept only
if it is closer to the inserted node than to every neighbor already kept,
which spreads links across directions instead of clumping them.

Codebooks smaller than FLAT_LIMIT get a single base layer; the hierarchy only
pays off beyond that.

Determinism: levels are a pure function of the seed, insertion order is data
order, and every ordering decision breaks ties by ascending node id. The one
exception is the batched assigner, which resolves exact distance ties by beam
slot rather than by id; it is used for bulk assignment where ties carry no
contract. Adjacency list order is insertion order; it never affects results
because candidate ranking is by (distance, id).
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from .util import as_float_matrix, row_sq_norms

FLAT_LIMIT = 1024

# neighbor lists may transiently grow to cap + slack before the heuristic
# shrink runs; the packed graph always obeys the caps
_SHRINK_SLACK = 2


@dataclass
class GraphLayer:
    node_ids: np.ndarray  # (n_l,) int32, ascending
    adjacency: np.ndarray  # (n_l, width) int32, -1 padded
    local_of: np.ndarray  # (node_count,) int32, -1 where absent


@dataclass
class ProximityGraph:
    centroids: np.ndarray  # (n, dim) float32, shared reference
    levels: np.ndarray  # (n,) int32
    layers: list  # GraphLayer, index = layer, 0 is the base
    entry_point: int
    max_links: int
    _sq: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def node_count(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    @property
    def max_level(self) -> int:
        return len(self.layers) - 1

    def sq_norms(self):
        if self._sq is None:
            self._sq = row_sq_norms(self.centroids)
        return self._sq

    def layer_cap(self, layer: int) -> int:
        return self.max_links if layer == 0 else max(1, self.max_links // 2)


def _draw_levels(n, max_links, seed):
    if n < FLAT_LIMIT:
        return np.zeros(n, dtype=np.int32)
    rng = np.random.default_rng(seed)
    mult = 1.0 / np.log(max_links)
    u = rng.random(n)
    u[u == 0] = np.nextafter(0, 1)
    return np.floor(-np.log(u) * mult).astype(np.int32)


class _Builder:
    """Mutable construction state; packs into a ProximityGraph at the end."""

    def __init__(self, centroids, max_links, ef_construction, seed):
        self.c = centroids
        self.c_sq = row_sq_norms(centroids)
        self.n = centroids.shape[0]
        self.max_links = max_links
        self.ef = ef_construction
        self.levels = _draw_levels(self.n, max_links, seed)
        self.adj = [
            {} for _ in range(int(self.levels.max()) + 1)
        ]  # layer -> {node: [ids]}
        self.entry = 0

    def cap(self, layer):
        return self.max_links if layer == 0 else max(1, self.max_links // 2)

    def dists_to(self, q, q_sq, ids):
        arr = np.asarray(ids, dtype=np.int64)
        d = self.c_sq[arr] - 2.0 * (self.c[arr] @ q) + q_sq
        np.maximum(d, 0.0, out=d)
        return d

    def greedy_descent(self, q, q_sq, layer, cur, cur_d):
        adj = self.adj[layer]
        while True:
            nbrs = adj.get(cur)
            if not nbrs:
                return cur, cur_d
            d = self.dists_to(q, q_sq, nbrs)
            j = int(np.lexsort((nbrs, d))[0])
            if (d[j], nbrs[j]) < (cur_d, cur):
                cur, cur_d = int(nbrs[j]), float(d[j])
            else:
                return cur, cur_d

    def search_layer(self, q, q_sq, layer, entry, entry_d, ef):
        """Best-first search; returns [(d, id)] ascending by (d, id)."""
        adj = self.adj[layer]
        visited = np.zeros(self.n, dtype=bool)
        visited[entry] = True
        cand = [(entry_d, entry)]
        best = [(-entry_d, -entry)]  # max-heap over (d, id)
        while cand:
            d, node = heapq.heappop(cand)
            if len(best) >= ef and (d, node) > (-best[0][0], -best[0][1]):
                break
            nbrs = adj.get(node)
            if not nbrs:
                continue
            fresh = [e for e in nbrs if not visited[e]]
            if not fresh:
                continue
            for e in fresh:
                visited[e] = True
            dd = self.dists_to(q, q_sq, fresh)
            for t, e in enumerate(fresh):
                de = float(dd[t])
                if len(best) < ef or (de, e) < (-best[0][0], -best[0][1]):
                    heapq.heappush(cand, (de, e))
                    heapq.heappush(best, (-de, -e))
                    if len(best) > ef:
                        heapq.heappop(best)
        out = sorted((-nd, -ni) for nd, ni in best)
        return out

    def select_heuristic(self, cands, cap):
        """Keep candidates closer to the target than to anything already kept.

        cands is [(d, id)] ascending by (d, id) with d the distance to the
        target node. Returns at most cap ids, in selection order.
        """
        kept_ids = []
        kept_vecs = np.empty((cap, self.c.shape[1]), dtype=np.float32)
        for d, e in cands:
            if len(kept_ids) == cap:
                break
            if kept_ids:
                diff = kept_vecs[: len(kept_ids)] - self.c[e]
                dd = np.einsum("ij,ij->i", diff, diff)
                if (dd < d).any():
                    continue
            kept_vecs[len(kept_ids)] = self.c[e]
            kept_ids.append(int(e))
        return kept_ids

    def shrink(self, node, layer):
        lst = self.adj[layer][node]
        d = self.dists_to(self.c[node], float(self.c_sq[node]), lst)
        order = np.lexsort((lst, d))
        cands = [(float(d[j]), int(lst[j])) for j in order]
        self.adj[layer][node] = self.select_heuristic(cands, self.cap(layer))

    def insert(self, i):
        lv = int(self.levels[i])
        for layer in range(lv + 1):
            self.adj[layer][i] = []
        if i == 0:
            return
        q = self.c[i]
        q_sq = float(self.c_sq[i])
        ep = self.entry
        ep_d = float(self.c_sq[ep] - 2.0 * float(self.c[ep] @ q) + q_sq)
        ep_d = max(ep_d, 0.0)
        top = int(self.levels[self.entry])
        for layer in range(top, lv, -1):
            ep, ep_d = self.greedy_descent(q, q_sq, layer, ep, ep_d)
        for layer in range(min(top, lv), -1, -1):
            found = self.search_layer(q, q_sq, layer, ep, ep_d, self.ef)
            cap = self.cap(layer)
            selected = self.select_heuristic(found, cap)
            self.adj[layer][i] = list(selected)
            limit = cap * _SHRINK_SLACK
            for e in selected:
                lst = self.adj[layer][e]
                lst.append(i)
                if len(lst) > limit:
                    self.shrink(e, layer)
            ep, ep_d = found[0][1], found[0][0]
        if lv > int(self.levels[self.entry]):
            self.entry = i

    def repair_reachability(self):
        """Relink base-layer orphans so every node is reachable from the entry.

        Shrinking can evict all inbound edges of a node, which would hide it
        from search and bulk assignment forever. Each pass connects the orphan
        nearest to the reachable set through its closest reachable node,
        evicting that node's farthest repair-free edge when full. Repair edges
        are never evicted, so the loop terminates.
        """
        adj = self.adj[0]
        cap = self.cap(0)
        protected = set()
        while True:
            seen = np.zeros(self.n, dtype=bool)
            seen[self.entry] = True
            stack = [self.entry]
            while stack:
                for e in adj[stack.pop()]:
                    if not seen[e]:
                        seen[e] = True
                        stack.append(e)
            orphans = np.flatnonzero(~seen)
            if orphans.size == 0:
                return
            hosts = np.flatnonzero(seen)
            best = None  # (distance, host, orphan); host has room or an evictable edge
            for u in orphans:
                d = self.dists_to(self.c[u], float(self.c_sq[u]), hosts)
                for t in np.lexsort((hosts, d)):
                    v = int(hosts[t])
                    if len(adj[v]) < cap or any(
                        (v, e) not in protected for e in adj[v]
                    ):
                        pair = (float(d[t]), v, int(u))
                        if best is None or pair < best:
                            best = pair
                        break
            if best is None:
                return
            _, v, u = best
            lst = adj[v]
            if len(lst) >= cap:
                d = self.dists_to(self.c[v], float(self.c_sq[v]), lst)
                for t in np.lexsort((lst, d))[::-1]:  # farthest first
                    if (v, lst[int(t)]) not in protected:
                        del lst[int(t)]
                        break
            lst.append(u)
            protected.add((v, u))

    def pack(self):
        for layer, table in enumerate(self.adj):
            cap = self.cap(layer)
            for node, lst in table.items():
                if len(lst) > cap:
                    self.shrink(node, layer)
        self.repair_reachability()
        return ProximityGraph(
            centroids=self.c,
            levels=self.levels,
            layers=pack_adjacency(self.adj, self.n),
            entry_point=self.entry,
            max_links=self.max_links,
        )


def pack_adjacency(tables, node_count):
    """Pack per-layer {node: [neighbor, ...]} tables into GraphLayer arrays.

    Neighbor order within each list is preserved; rows are padded with -1 to
    the widest degree in the layer (at least 1).
    """
    layers = []
    for table in tables:
        node_ids = np.array(sorted(table.keys()), dtype=np.int32)
        width = max((len(table[int(n)]) for n in node_ids), default=0)
        width = max(width, 1)
        adjacency = np.full((len(node_ids), width), -1, dtype=np.int32)
        for row, n in enumerate(node_ids):
            lst = table[int(n)]
            adjacency[row, : len(lst)] = lst
        local_of = np.full(node_count, -1, dtype=np.int32)
        local_of[node_ids] = np.arange(len(node_ids), dtype=np.int32)
        layers.append(GraphLayer(node_ids, adjacency, local_of))
    return layers


def build_graph(codebook, max_links=32, ef_construction=256, seed=0):
    """Build the layered graph over codebook centroids (or a raw matrix)."""
    centroids = getattr(codebook, "centroids", codebook)
    centroids = as_float_matrix(centroids, "centroids")
    if centroids.shape[0] < 1:
        raise ValueError("graph needs at least one node")
    if max_links < 2:
        raise ValueError("max_links must be >= 2")
    if ef_construction < 1:
        raise ValueError("ef_construction must be >= 1")
    b = _Builder(centroids, max_links, ef_construction, seed)
    for i in range(b.n):
        b.insert(i)
    return b.pack()


def _packed_search_layer(graph, q, q_sq, layer, entry, entry_d, ef):
    lay = graph.layers[layer]
    c = graph.centroids
    c_sq = graph.sq_norms()
    visited = np.zeros(graph.node_count, dtype=bool)
    visited[entry] = True
    cand = [(entry_d, entry)]
    best = [(-entry_d, -entry)]
    while cand:
        d, node = heapq.heappop(cand)
        if len(best) >= ef and (d, node) > (-best[0][0], -best[0][1]):
            break
        row = lay.adjacency[lay.local_of[node]]
        row = row[row >= 0]
        fresh = row[~visited[row]]
        if fresh.size == 0:
            continue
        visited[fresh] = True
        dd = c_sq[fresh] - 2.0 * (c[fresh] @ q) + q_sq
        np.maximum(dd, 0.0, out=dd)
        for t in range(fresh.size):
            e = int(fresh[t])
            de = float(dd[t])
            if len(best) < ef or (de, e) < (-best[0][0], -best[0][1]):
                heapq.heappush(cand, (de, e))
                heapq.heappush(best, (-de, -e))
                if len(best) > ef:
                    heapq.heappop(best)
    return sorted((-nd, -ni) for nd, ni in best)


def _packed_greedy(graph, q, q_sq, layer, cur, cur_d):
    lay = graph.layers[layer]
    c = graph.centroids
    c_sq = graph.sq_norms()
    while True:
        row = lay.adjacency[lay.local_of[cur]]
        row = row[row >= 0]
        if row.size == 0:
            return cur, cur_d
        d = c_sq[row] - 2.0 * (c[row] @ q) + q_sq
        np.maximum(d, 0.0, out=d)
        j = int(np.lexsort((row, d))[0])
        if (float(d[j]), int(row[j])) < (cur_d, cur):
            cur, cur_d = int(row[j]), float(d[j])
        else:
            return cur, cur_d


def search_graph(graph, query, top, ef_search=128):
    """Approximate `top` nearest nodes, sorted ascending by (distance, id).

    Returns (ids int32 (top,), squared distances float32 (top,)). ef_search is
    raised to top when smaller. Approximation only affects which ids come
    back; the distances reported for them are exact.
    """
    q = np.asarray(query, dtype=np.float32).reshape(-1)
    if q.shape[0] != graph.dim:
        raise ValueError(f"dimension mismatch: query {q.shape[0]} vs graph {graph.dim}")
    if not 0 < top <= graph.node_count:
        raise ValueError(f"need 0 < top <= {graph.node_count}, got {top}")
    ef = max(int(ef_search), top)
    q_sq = float(q @ q)
    cur = graph.entry_point
    cur_d = float(graph.sq_norms()[cur] - 2.0 * float(graph.centroids[cur] @ q) + q_sq)
    cur_d = max(cur_d, 0.0)
    for layer in range(graph.max_level, 0, -1):
        cur, cur_d = _packed_greedy(graph, q, q_sq, layer, cur, cur_d)
    found = _packed_search_layer(graph, q, q_sq, 0, cur, cur_d, ef)[:top]
    ids = np.fromiter((e for _, e in found), dtype=np.int64, count=len(found))
    # distances must be exact for the ids returned; the expanded form used
    # during traversal carries cancellation error, so recompute by difference
    diff = graph.centroids[ids].astype(np.float64) - q.astype(np.float64)
    dists = np.einsum("ij,ij->i", diff, diff).astype(np.float32)
    order = np.lexsort((ids, dists))
    return ids[order].astype(np.int32), dists[order]


def _batch_block(graph, queries, ef):
    """Lockstep beam search over one block of queries; returns top-1 ids/dists."""
    c = graph.centroids
    c_sq = graph.sq_norms()
    n = graph.node_count
    b = queries.shape[0]
    q_sq = row_sq_norms(queries)
    cur = np.full(b, graph.entry_point, dtype=np.int64)
    cur_d = c_sq[cur] - 2.0 * np.einsum("bd,bd->b", c[cur], queries) + q_sq
    np.maximum(cur_d, 0.0, out=cur_d)

    for layer in range(graph.max_level, 0, -1):
        lay = graph.layers[layer]
        active = np.arange(b)
        while active.size:
            rows = active
            nbr = lay.adjacency[lay.local_of[cur[rows]]]
            valid = nbr >= 0
            safe = np.where(valid, nbr, 0).astype(np.int64)
            d = (
                c_sq[safe]
                - 2.0 * np.einsum("rkd,rd->rk", c[safe], queries[rows])
                + q_sq[rows, None]
            )
            np.maximum(d, 0.0, out=d)
            d[~valid] = np.inf
            j = np.argmin(d, axis=1)
            ar = np.arange(rows.size)
            bd, bi = d[ar, j], safe[ar, j]
            better = (bd < cur_d[rows]) | ((bd == cur_d[rows]) & (bi < cur[rows]))
            upd = rows[better]
            cur[upd] = bi[better]
            cur_d[upd] = np.maximum(bd[better], 0.0)
            active = upd

    w = ef
    alive = np.arange(b)
    beam_i = np.full((b, w), -1, dtype=np.int64)
    beam_d = np.full((b, w), np.inf, dtype=np.float64)
    expanded = np.ones((b, w), dtype=bool)
    beam_i[:, 0] = cur
    beam_d[:, 0] = cur_d
    expanded[:, 0] = False
    visited = np.zeros((b, n), dtype=bool)
    visited[np.arange(b), cur] = True
    out_i = np.empty(b, dtype=np.int32)
    out_d = np.empty(b, dtype=np.float32)
    adj0 = graph.layers[0].adjacency

    def finish(rows_local):
        rows = alive[rows_local]
        bd = beam_d[rows_local]
        bi = beam_i[rows_local]
        m = bd.min(axis=1)
        tie = (bd == m[:, None]) & (bi >= 0)
        ids = np.where(tie, bi, np.iinfo(np.int64).max).min(axis=1)
        out_i[rows] = ids.astype(np.int32)
        out_d[rows] = m.astype(np.float32)

    while alive.size:
        masked = np.where(expanded, np.inf, beam_d)
        sel = np.argmin(masked, axis=1)
        ar = np.arange(alive.size)
        has_work = masked[ar, sel] < np.inf
        if not has_work.all():
            done = ~has_work
            finish(np.flatnonzero(done))
            keep = np.flatnonzero(has_work)
            alive = alive[keep]
            beam_i, beam_d = beam_i[keep], beam_d[keep]
            expanded, visited = expanded[keep], visited[keep]
            sel = sel[keep]
            ar = np.arange(alive.size)
            if alive.size == 0:
                break
        cur_nodes = beam_i[ar, sel]
        expanded[ar, sel] = True
        nbr = adj0[cur_nodes]
        safe = np.where(nbr >= 0, nbr, 0).astype(np.int64)
        seen = visited[ar[:, None], safe]
        valid = (nbr >= 0) & ~seen
        qs = queries[alive]
        d = (
            c_sq[safe]
            - 2.0 * np.einsum("rkd,rd->rk", c[safe], qs)
            + q_sq[alive, None]
        )
        np.maximum(d, 0.0, out=d)
        d[~valid] = np.inf
        visited[ar[:, None], safe] |= valid
        cat_d = np.concatenate([beam_d, d], axis=1)
        cat_i = np.concatenate([beam_i, np.where(valid, safe, -1)], axis=1)
        cat_e = np.concatenate([expanded, ~valid], axis=1)
        part = np.argpartition(cat_d, w - 1, axis=1)[:, :w]
        beam_d = np.take_along_axis(cat_d, part, axis=1)
        beam_i = np.take_along_axis(cat_i, part, axis=1)
        expanded = np.take_along_axis(cat_e, part, axis=1)
    return out_i, out_d


def assign_batch(graph, queries, ef=32, elem_budget=32_000_000):
    """Approximate nearest node for many queries at once (top-1 only).

    Blocked so the visited bitmap stays within elem_budget bytes. Used for
    bulk assignment during training and index builds.
    """
    queries = as_float_matrix(queries, "queries")
    if queries.shape[1] != graph.dim:
        raise ValueError(
            f"dimension mismatch: queries {queries.shape[1]} vs graph {graph.dim}"
        )
    ef = max(4, int(ef))
    block = int(np.clip(elem_budget // max(graph.node_count, 1), 64, 8192))
    ids = np.empty(queries.shape[0], dtype=np.int32)
    dists = np.empty(queries.shape[0], dtype=np.float32)
    for s in range(0, queries.shape[0], block):
        bi, _ = _batch_block(graph, queries[s : s + block], ef)
        ids[s : s + block] = bi
        # exact distances by difference, matching search_graph
        diff = graph.centroids[bi].astype(np.float64) - queries[
            s : s + block
        ].astype(np.float64)
        dists[s : s + block] = np.einsum("ij,ij->i", diff, diff).astype(np.float32)
    return ids, dists


def check_adjacency_caps(graph):
    """True iff every adjacency list obeys the per-layer cap (and max_links)."""
    for layer, lay in enumerate(graph.layers):
        degrees = (lay.adjacency >= 0).sum(axis=1)
        if degrees.size and degrees.max() > graph.layer_cap(layer):
            return False
    return True


def reachable_from_entry(graph):
    """Number of nodes reachable from the entry point on the base layer."""
    adj = graph.layers[0].adjacency
    seen = np.zeros(graph.node_count, dtype=bool)
    stack = [graph.entry_point]
    seen[graph.entry_point] = True
    while stack:
        node = stack.pop()
        row = adj[graph.layers[0].local_of[node]]
        for e in row[row >= 0]:
            if not seen[e]:
                seen[e] = True
                stack.append(int(e))
    return int(seen.sum())
