"""Synthetic benchmark data and exact ground truth."""

import numpy as np

from .util import as_float_matrix, row_sq_norms


def synth_clustered(n, dim, n_clusters, spread=0.5, seed=0):
    """Gaussian blobs around uniformly drawn centers in the unit cube.

    Cluster membership is drawn uniformly, so sizes vary. spread is the noise
    standard deviation; spread=0 puts every point exactly on its center.
    Deterministic for a given seed.
    """
    if n < 0 or dim <= 0:
        raise ValueError(f"bad shape n={n} dim={dim}")
    if not 0 < n_clusters or (n > 0 and n_clusters > n):
        raise ValueError(f"need 0 < n_clusters <= n, got {n_clusters} vs {n}")
    rng = np.random.default_rng(seed)
    centers = rng.random((n_clusters, dim), dtype=np.float32)
    labels = rng.integers(0, n_clusters, size=n)
    noise = rng.standard_normal((n, dim), dtype=np.float32)
    return centers[labels] + np.float32(spread) * noise


def l2_normalize(data):
    """Row-normalize to unit length; zero rows are left untouched."""
    data = as_float_matrix(data)
    norms = np.sqrt(row_sq_norms(data))
    norms[norms == 0] = 1.0
    return (data / norms[:, None]).astype(np.float32)


def exact_ground_truth(base, queries, k=100, row_budget=32_000_000):
    """Exact k nearest neighbors by squared L2, ties broken by ascending id.

    Distances are accumulated in float64 so rankings do not depend on the
    blocking scheme. Returns int32 ids of shape (nq, k).
    """
    base = as_float_matrix(base, "base")
    queries = as_float_matrix(queries, "queries")
    n, d = base.shape
    nq, dq = queries.shape
    if dq != d:
        raise ValueError(f"dimension mismatch: base {d} vs queries {dq}")
    if not 0 < k <= n:
        raise ValueError(f"need 0 < k <= {n}, got {k}")
    b64 = base.astype(np.float64)
    b_sq = row_sq_norms(b64)
    out = np.empty((nq, k), dtype=np.int32)
    chunk = max(1, int(row_budget // max(n, 1)))
    for start in range(0, nq, chunk):
        q64 = queries[start : start + chunk].astype(np.float64)
        dists = row_sq_norms(q64)[:, None] + b_sq[None, :] - 2.0 * (q64 @ b64.T)
        for r in range(dists.shape[0]):
            row = dists[r]
            kth = np.partition(row, k - 1)[k - 1]
            cand = np.flatnonzero(row <= kth)
            order = np.lexsort((cand, row[cand]))
            out[start + r] = cand[order[:k]]
    return out
