"""Small numeric helpers used across modules."""

import hashlib

import numpy as np


def as_float_matrix(x, name="data"):
    """Validate a 2-d float32 matrix and return it C-contiguous."""
    arr = np.asarray(x)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-d, got shape {arr.shape}")
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    if not np.isfinite(arr).all():
        raise ValueError(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def row_sq_norms(x):
    return np.einsum("ij,ij->i", x, x)


def sq_dists(x, c, c_sq=None):
    """Squared euclidean distances between rows of x (n,d) and c (k,d).

    Uses the norm expansion; tiny negatives from cancellation are clamped.
    """
    if c_sq is None:
        c_sq = row_sq_norms(c)
    d = row_sq_norms(x)[:, None] + c_sq[None, :] - 2.0 * (x @ c.T)
    np.maximum(d, 0.0, out=d)
    return d


def chunk_starts(n, chunk):
    return range(0, n, max(1, chunk))


def topk_rows(dists, top):
    """Per-row indices of the `top` smallest entries, ties broken by lower index.

    Stable argsort gives exactly the (value, column) lexicographic order because
    columns are scanned in ascending order. Quadratic-ish in row length, so only
    use on moderate matrices.
    """
    order = np.argsort(dists, axis=1, kind="stable")[:, :top]
    vals = np.take_along_axis(dists, order, axis=1)
    return order.astype(np.int32), vals


def smallest_ids(dists, top):
    """Indices of the `top` smallest values of a 1-d array, (value, id) order."""
    order = np.argsort(dists, kind="stable")[:top]
    return order.astype(np.int32)


def concat_ranges(starts, lengths):
    """Concatenate [s, s+len) integer ranges into one index array.

    Equivalent to np.concatenate([np.arange(s, s+l) ...]) without the Python
    loop. Empty ranges are allowed.
    """
    starts = np.asarray(starts, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    keep = lengths > 0
    starts, lengths = starts[keep], lengths[keep]
    if len(starts) == 0:
        return np.empty(0, dtype=np.int64)
    ends = np.cumsum(lengths)
    out = np.ones(ends[-1], dtype=np.int64)
    out[0] = starts[0]
    out[ends[:-1]] = starts[1:] - (starts[:-1] + lengths[:-1] - 1)
    return np.cumsum(out)


def blake64(data: bytes) -> int:
    """64-bit content hash (blake2b truncated to 8 bytes)."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "little")


def array_hash(arr) -> int:
    arr = np.ascontiguousarray(arr)
    h = hashlib.blake2b(digest_size=8)
    h.update(str(arr.dtype).encode())
    h.update(str(arr.shape).encode())
    h.update(arr.tobytes())
    return int.from_bytes(h.digest(), "little")


def file_hash(path) -> str:
    h = hashlib.blake2b(digest_size=8)
    with open(path, "rb") as f:
        while True:
            block = f.read(1 << 20)
            if not block:
                break
            h.update(block)
    return h.hexdigest()


def derive_seed(seed: int, tag: str) -> int:
    """Stable sub-stream seed for a named stage."""
    return blake64(f"{seed}:{tag}".encode()) & 0x7FFFFFFF
