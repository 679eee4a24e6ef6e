"""Product quantization with an optional learned orthogonal rotation.

Vectors are split into m contiguous subspaces with 256 codewords each, so a
code is m bytes. The rotation, when enabled, is refined by alternating between
re-encoding, codeword updates, and an orthogonal Procrustes fit; every step is
non-increasing in reconstruction error, so the rotated quantizer is never worse
than the unrotated one on its training data.
"""

from dataclasses import dataclass

import numpy as np

from .kmeans import lloyd
from .util import as_float_matrix, derive_seed, sq_dists

CODEWORDS = 256


@dataclass
class PQCodebook:
    codewords: np.ndarray  # (m, 256, sub_dim) float32
    rotation: np.ndarray | None = None  # (dim, dim) float32, orthogonal

    @property
    def m(self) -> int:
        return self.codewords.shape[0]

    @property
    def sub_dim(self) -> int:
        return self.codewords.shape[2]

    @property
    def dim(self) -> int:
        return self.m * self.sub_dim

    def rotate(self, data):
        """Map vectors into the encoding space."""
        if self.rotation is None:
            return data
        return data @ self.rotation.T

    def unrotate(self, data):
        if self.rotation is None:
            return data
        return data @ self.rotation


def _check_dims(codebook, data, name="data"):
    if data.shape[1] != codebook.dim:
        raise ValueError(
            f"dimension mismatch: {name} {data.shape[1]} vs codebook {codebook.dim}"
        )


def _encode_rotated(codewords, rotated, row_budget=16_000_000):
    m, _, sub = codewords.shape
    n = rotated.shape[0]
    codes = np.empty((n, m), dtype=np.uint8)
    chunk = max(1, row_budget // CODEWORDS)
    for j in range(m):
        block_src = rotated[:, j * sub : (j + 1) * sub]
        for s in range(0, n, chunk):
            d = sq_dists(block_src[s : s + chunk], codewords[j])
            codes[s : s + chunk, j] = np.argmin(d, axis=1)
    return codes


def _decode_rotated(codewords, codes):
    m = codewords.shape[0]
    parts = [codewords[j][codes[:, j]] for j in range(m)]
    return np.concatenate(parts, axis=1)


def _update_codewords(codewords, rotated, codes):
    """Replace each codeword by the mean of its points; empty codes keep the old
    codeword so the refinement objective cannot increase."""
    m, k, sub = codewords.shape
    out = codewords.copy()
    for j in range(m):
        block = rotated[:, j * sub : (j + 1) * sub]
        counts = np.bincount(codes[:, j], minlength=k)
        sums = np.empty((k, sub), dtype=np.float64)
        for t in range(sub):
            sums[:, t] = np.bincount(codes[:, j], weights=block[:, t], minlength=k)
        nonempty = counts > 0
        out[j][nonempty] = (sums[nonempty] / counts[nonempty, None]).astype(np.float32)
    return out


def train_pq(data, m, iters=25, seed=0, learn_rotation=False, rotation_rounds=4):
    """Train subspace codebooks, optionally with a learned rotation.

    The unrotated codebooks are trained first (k-means per subspace); rotation
    refinement starts from the identity, so it can only improve training error.
    """
    data = as_float_matrix(data)
    n, dim = data.shape
    if m <= 0 or dim % m != 0:
        raise ValueError(f"m={m} must divide the dimension {dim}")
    if n < CODEWORDS:
        raise ValueError(f"need at least {CODEWORDS} training vectors, got {n}")
    sub = dim // m
    rng = np.random.default_rng(derive_seed(seed, "pq"))
    codewords = np.empty((m, CODEWORDS, sub), dtype=np.float32)
    for j in range(m):
        codewords[j] = lloyd(data[:, j * sub : (j + 1) * sub], CODEWORDS, iters, rng)
    if not learn_rotation:
        return PQCodebook(codewords, None)

    rotation = np.eye(dim, dtype=np.float32)
    for _ in range(rotation_rounds):
        rotated = data @ rotation.T
        codes = _encode_rotated(codewords, rotated)
        codewords = _update_codewords(codewords, rotated, codes)
        recon = _decode_rotated(codewords, codes)
        # orthogonal Procrustes: rotation minimizing |data @ R.T - recon|,
        # i.e. R.T = U @ Vt for svd(data.T @ recon)
        u, _, vt = np.linalg.svd(data.T.astype(np.float64) @ recon.astype(np.float64))
        rotation = (vt.T @ u.T).astype(np.float32)
    return PQCodebook(codewords, rotation)


def pq_encode(codebook, data):
    """Encode rows to (n, m) uint8 codes; nearest codeword per subspace, ties to
    the lowest codeword index."""
    data = as_float_matrix(data)
    _check_dims(codebook, data)
    return _encode_rotated(codebook.codewords, codebook.rotate(data))


def pq_decode(codebook, codes):
    """Reconstruct (n, dim) float32 vectors in the original space."""
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[1] != codebook.m:
        raise ValueError(f"expected (n, {codebook.m}) codes, got {codes.shape}")
    recon = _decode_rotated(codebook.codewords, codes.astype(np.int64, copy=False))
    return np.ascontiguousarray(codebook.unrotate(recon).astype(np.float32))


@dataclass
class LookupTable:
    entries: np.ndarray  # (m, 256) float32
    mode: str  # "squared" | "inner"


def build_lookup_table(codebook, query, mode="squared"):
    """Per-subspace tables over the rotated query.

    squared: entry[j][i] = |q_j - codeword|^2, so a code's entries sum to the
    squared distance between the query and its reconstruction.
    inner: entry[j][i] = <q_j, codeword>, so the sum is <q, reconstruction>.
    """
    if mode not in ("squared", "inner"):
        raise ValueError(f"unknown table mode {mode!r}")
    query = np.asarray(query, dtype=np.float32).reshape(-1)
    if query.shape[0] != codebook.dim:
        raise ValueError(
            f"dimension mismatch: query {query.shape[0]} vs codebook {codebook.dim}"
        )
    q = codebook.rotate(query[None, :])[0]
    m, sub = codebook.m, codebook.sub_dim
    qparts = q.reshape(m, sub)
    if mode == "inner":
        entries = np.einsum("mks,ms->mk", codebook.codewords, qparts)
    else:
        diff = codebook.codewords - qparts[:, None, :]
        entries = np.einsum("mks,mks->mk", diff, diff)
    return LookupTable(entries.astype(np.float32), mode)


def lookup_code_sums(table, codes):
    """Sum table entries along each code row: (n, m) uint8 -> (n,) float32."""
    cols = np.arange(table.entries.shape[0])
    return table.entries[cols[None, :], codes.astype(np.int64, copy=False)].sum(
        axis=1, dtype=np.float32
    )


def reconstruction_mse(codebook, data):
    """Mean squared reconstruction error over rows."""
    data = as_float_matrix(data)
    _check_dims(codebook, data)
    recon = pq_decode(codebook, pq_encode(codebook, data))
    diff = (data - recon).astype(np.float64)
    return float(np.einsum("ij,ij->i", diff, diff).mean())
