"""k-means training for the coarse codebook.

Seeding is k-means++, iterations are plain Lloyd. Assignment can be exact
(blocked BLAS) or approximate through a proximity graph rebuilt per iteration,
which is how very large codebooks are trained. All tie-breaks are by ascending
index so training is reproducible bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np

from .util import as_float_matrix, derive_seed, row_sq_norms, sq_dists, topk_rows

ASSIGNERS = ("exact", "graph", "auto")

# below this codebook size the blocked exact assigner beats graph search
GRAPH_ASSIGN_MIN_K = 1 << 16


@dataclass
class CoarseCodebook:
    centroids: np.ndarray  # (k, dim) float32
    _sq: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def sq_norms(self):
        if self._sq is None:
            self._sq = row_sq_norms(self.centroids)
        return self._sq


def _min_dists_blocked(data, centroids, c_sq, row_budget=16_000_000):
    """Per-row argmin and min of squared distances, blocked over rows."""
    n = data.shape[0]
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int32)
    dists = np.empty(n, dtype=np.float32)
    chunk = max(1, row_budget // max(k, 1))
    for s in range(0, n, chunk):
        block = sq_dists(data[s : s + chunk], centroids, c_sq)
        labels[s : s + chunk] = np.argmin(block, axis=1)
        dists[s : s + chunk] = np.take_along_axis(
            block, labels[s : s + chunk, None].astype(np.int64), axis=1
        )[:, 0]
    return labels, dists


def _exact_assigner(data):
    def assign(centroids):
        return _min_dists_blocked(data, centroids, row_sq_norms(centroids))

    return assign


def _graph_assigner(data, seed, ef):
    from .graph import assign_batch, build_graph  # local import, graph is a peer

    counter = {"it": 0}

    def assign(centroids):
        g = build_graph(
            centroids,
            max_links=32,
            ef_construction=max(64, ef),
            seed=derive_seed(seed, f"assign-graph-{counter['it']}"),
        )
        counter["it"] += 1
        return assign_batch(g, data, ef=ef)

    return assign


def _kmeans_pp(data, k, rng):
    """k-means++ D^2 seeding; falls back to lowest unchosen id on zero mass."""
    n = data.shape[0]
    chosen = np.zeros(n, dtype=bool)
    idx = int(rng.integers(n))
    chosen[idx] = True
    centers = [idx]
    d = sq_dists(data, data[idx : idx + 1]).ravel().astype(np.float64)
    for _ in range(1, k):
        total = float(d.sum())
        if total > 0.0:
            cum = np.cumsum(d)
            r = rng.random() * total
            idx = int(np.searchsorted(cum, r, side="right"))
            idx = min(idx, n - 1)
        else:
            idx = -1
        if idx < 0 or chosen[idx] or d[idx] == 0.0:
            # duplicates or roundoff landed on an existing center
            free = np.flatnonzero(~chosen)
            positive = free[d[free] > 0]
            idx = int(positive[0] if positive.size else free[0])
        chosen[idx] = True
        centers.append(idx)
        nd = sq_dists(data, data[idx : idx + 1]).ravel()
        np.minimum(d, nd, out=d)
    return data[np.array(centers)].copy()


def _update_means(data, labels, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.empty((k, data.shape[1]), dtype=np.float64)
    for j in range(data.shape[1]):
        sums[:, j] = np.bincount(labels, weights=data[:, j], minlength=k)
    safe = np.maximum(counts, 1)
    return (sums / safe[:, None]).astype(np.float32), counts


def _reseed_empty(centroids, counts, labels, dists, data):
    """Move each empty centroid onto the farthest point of the largest cluster."""
    for c in np.flatnonzero(counts == 0):
        donor = int(np.argmax(counts))
        members = np.flatnonzero(labels == donor)
        far = int(members[np.argmax(dists[members])])
        centroids[c] = data[far]
        labels[far] = c
        dists[far] = 0.0
        counts[donor] -= 1
        counts[c] = 1


def lloyd(data, k, iters, rng, assign=None):
    """k-means++ seeding plus Lloyd iterations; returns (k, dim) centroids."""
    if assign is None:
        assign = _exact_assigner(data)
    centroids = _kmeans_pp(data, k, rng)
    for _ in range(iters):
        labels, dists = assign(centroids)
        centroids, counts = _update_means(data, labels, k)
        if (counts == 0).any():
            _reseed_empty(centroids, counts, labels, dists, data)
    return centroids


def train_kmeans(data, k, iters=20, seed=0, assigner="exact"):
    data = as_float_matrix(data)
    n = data.shape[0]
    if not 0 < k <= n:
        raise ValueError(f"need 0 < k <= {n} training points, got k={k}")
    if iters < 0:
        raise ValueError("iters must be >= 0")
    if assigner not in ASSIGNERS:
        raise ValueError(f"assigner must be one of {ASSIGNERS}")
    if assigner == "auto":
        assigner = "graph" if k >= GRAPH_ASSIGN_MIN_K else "exact"
    rng = np.random.default_rng(derive_seed(seed, "kmeans"))
    if assigner == "graph":
        assign = _graph_assigner(data, seed, ef=32)
    else:
        assign = _exact_assigner(data)
    return CoarseCodebook(lloyd(data, k, iters, rng, assign))


def assign_exact(codebook, vectors, top=1):
    """Exact `top` nearest centroids per vector, (distance, id) ascending.

    Returns (ids (n, top) int32, squared distances (n, top) float32).
    """
    vectors = as_float_matrix(vectors, "vectors")
    if vectors.shape[1] != codebook.dim:
        raise ValueError(
            f"dimension mismatch: vectors {vectors.shape[1]} vs codebook {codebook.dim}"
        )
    if not 0 < top <= codebook.k:
        raise ValueError(f"need 0 < top <= {codebook.k}, got {top}")
    if top == 1:
        labels, dists = _min_dists_blocked(
            vectors, codebook.centroids, codebook.sq_norms()
        )
        return labels[:, None], dists[:, None]
    ids = np.empty((vectors.shape[0], top), dtype=np.int32)
    dd = np.empty((vectors.shape[0], top), dtype=np.float32)
    chunk = max(1, 16_000_000 // max(codebook.k, 1))
    for s in range(0, vectors.shape[0], chunk):
        block = sq_dists(vectors[s : s + chunk], codebook.centroids, codebook.sq_norms())
        ids[s : s + chunk], dd[s : s + chunk] = topk_rows(block, top)
    return ids, dd


def kmeans_distortion(codebook, data):
    """Mean squared distance to the closest centroid."""
    data = as_float_matrix(data)
    _, dists = _min_dists_blocked(data, codebook.centroids, codebook.sq_norms())
    return float(dists.mean(dtype=np.float64))


def mean_closest_centroid_distance(codebook, data):
    """Mean euclidean (not squared) distance to the closest centroid."""
    data = as_float_matrix(data)
    _, dists = _min_dists_blocked(data, codebook.centroids, codebook.sq_norms())
    return float(np.sqrt(dists, dtype=np.float64).mean())
