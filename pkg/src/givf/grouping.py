"""Subregion grouping around coarse centroids.

Each region's points are split into groups anchored at subcentroids that sit
on segments between the region centroid c and its nearest neighboring
centroids s_l:

    t_l = c + alpha * (s_l - c)

The shared factor alpha is learned in two passes over the region's training
points: first each point picks its best neighbor direction with a per-point
optimal (clamped) projection, then one global alpha is fit by least squares on
the chosen directions and clamped to [0, 1]. Both rules keep the grouped mean
squared point-to-anchor distance at or below the ungrouped one by
construction.
"""

from dataclasses import dataclass

import numpy as np

from .kmeans import assign_exact
from .util import as_float_matrix, row_sq_norms, sq_dists


def neighbor_centroids(codebook, l, row_budget=16_000_000):
    """Ids of the l nearest other centroids per centroid, (distance, id) order.

    Returns an int32 matrix of shape (k, l). Requires l < k.
    """
    k = codebook.k
    if not 0 < l < k:
        raise ValueError(f"need 0 < l < {k}, got l={l}")
    ids, _ = assign_exact(codebook, codebook.centroids, top=l + 1)
    out = np.empty((k, l), dtype=np.int32)
    rows = np.arange(k)
    for j in range(k):
        row = ids[j]
        out[j] = row[row != j][:l]
    # guard: a centroid duplicated elsewhere keeps itself out of its own list
    assert (out != rows[:, None]).all()
    return out


def learn_alpha(points, centroid, neighbors):
    """Fit the shared interpolation factor for one region.

    points: (n, dim) training points of the region, n >= 1.
    centroid: (dim,) region centroid. neighbors: (l, dim) neighbor centroids.
    Returns alpha in [0, 1].
    """
    points = as_float_matrix(points, "points")
    if points.shape[0] == 0:
        raise ValueError("learn_alpha needs at least one point")
    centroid = np.asarray(centroid, dtype=np.float32).reshape(-1)
    neighbors = as_float_matrix(neighbors, "neighbors")
    dirs = neighbors.astype(np.float64) - centroid.astype(np.float64)
    nsq = row_sq_norms(dirs)
    usable = nsq > 0
    if not usable.any():
        return 0.0
    xc = points.astype(np.float64) - centroid.astype(np.float64)
    dots = xc @ dirs.T
    xc_sq = row_sq_norms(xc)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = dots / nsq[None, :]
    t = np.clip(t, 0.0, 1.0)
    resid = xc_sq[:, None] - 2.0 * t * dots + (t * t) * nsq[None, :]
    resid[:, ~usable] = np.inf
    pick = np.argmin(resid, axis=1)  # first minimum = lowest neighbor index
    num = dots[np.arange(len(points)), pick].sum()
    den = nsq[pick].sum()
    if den <= 0:
        return 0.0
    return float(np.clip(num / den, 0.0, 1.0))


def subcentroids_for_region(centroid, neighbors, alpha):
    """Anchor points t_l = c + alpha (s_l - c) as an (l, dim) float32 matrix."""
    centroid = np.asarray(centroid, dtype=np.float32)
    return (centroid[None, :] + np.float32(alpha) * (neighbors - centroid[None, :])).astype(
        np.float32
    )


def assign_subcentroid(points, centroid, neighbors, alpha):
    """Index of the nearest anchor per point, ties to the lowest group index.

    Accepts one point (dim,) or a batch (n, dim); returns int32 scalar / array.
    """
    pts = np.asarray(points, dtype=np.float32)
    single = pts.ndim == 1
    if single:
        pts = pts[None, :]
    anchors = subcentroids_for_region(centroid, np.asarray(neighbors, np.float32), alpha)
    d = sq_dists(pts, anchors)
    out = np.argmin(d, axis=1).astype(np.int32)
    return out[0] if single else out


@dataclass
class ConstQuantizer:
    """Uniform 256-level scalar quantizer between robust bounds.

    Values outside [lo, hi] clamp to the edge buckets; dequantization returns
    the bucket midpoint, so the round-trip error inside the bounds is at most
    half a bucket.
    """

    lo: float
    hi: float

    @property
    def step(self) -> float:
        return (self.hi - self.lo) / 256.0

    def quantize(self, values):
        v = np.asarray(values, dtype=np.float64)
        if self.step <= 0:
            return np.zeros(v.shape, dtype=np.uint8)
        b = np.floor((v - self.lo) / self.step)
        return np.clip(b, 0, 255).astype(np.uint8)

    def dequantize(self, bucket):
        b = np.asarray(bucket, dtype=np.float64)
        return ((b + 0.5) * self.step + self.lo).astype(np.float32)

    def table(self):
        """Dequantized value of every bucket, shape (256,) float32."""
        return self.dequantize(np.arange(256))


def train_const_quantizer(values, lower_pct=0.1, upper_pct=99.9):
    """Fit quantizer bounds to robust percentiles of the training constants."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot train a quantizer on zero values")
    if not np.isfinite(v).all():
        raise ValueError("training constants contain non-finite values")
    # bounds round through float32 because that is how they are serialized;
    # keeping them identical pre- and post-save keeps searches identical too
    lo = float(np.float32(np.percentile(v, lower_pct)))
    hi = float(np.float32(np.percentile(v, upper_pct)))
    if hi < lo:
        lo, hi = hi, lo
    return ConstQuantizer(lo=lo, hi=hi)
