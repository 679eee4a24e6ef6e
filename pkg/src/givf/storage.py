"""Single-file index serialization.

Layout (all little-endian), version 1:

    magic           4 bytes  "GIVF"
    version         u32
    flags           u32      bit0 = grouping, bit1 = rotation
    dim, k, m, l    4 x u32
    dataset_hash    u64
    build_seed      u64
    const_lo        f32      constant-byte dequantization bounds
    const_hi        f32
    coarse          k*dim f32
    rotation        dim*dim f32          (only when flags bit1)
    pq codewords    m*256*(dim/m) f32
    graph           u32 entry_point, u32 max_links, then per node:
                      u32 layer_count, per layer: u32 degree + degree*u32 ids
    regions         per region: u32 size, f32 alpha,
                      when grouping: l*u32 neighbor ids, l*f32 norm terms,
                                     l*u32 group sizes
                      then size records of (u32 id, m*u8 code, u8 const)
    checksum        8 bytes  blake2b-8 of everything before it

Writes are atomic: the file is assembled under a temporary name in the same
directory and moved into place with os.replace. Saving a loaded index
reproduces the original bytes exactly.
"""

import hashlib
import os
import struct

import numpy as np

from .errors import BadMagicError, ChecksumError, StorageError, VersionError
from .grouping import ConstQuantizer
from .index import BuildParams, GroupedIndex
from .kmeans import CoarseCodebook
from .pq import CODEWORDS, PQCodebook

MAGIC = b"GIVF"
_HEADER = struct.Struct("<II4I2Q2f")  # after magic
_U64_MASK = (1 << 64) - 1


def _record_dtype(m):
    return np.dtype([("id", "<u4"), ("code", "u1", (m,)), ("const", "u1")])


class _Tee:
    """File writer that hashes every byte it passes through."""

    def __init__(self, f):
        self.f = f
        self.h = hashlib.blake2b(digest_size=8)

    def write(self, data):
        self.h.update(data)
        self.f.write(data)


def _write_body(w, index):
    p = index.params
    k, dim, m = index.k, index.dim, p.m
    flags = (1 if p.grouping else 0) | (2 if p.rotation else 0)
    w.write(MAGIC)
    w.write(
        _HEADER.pack(
            p.version,
            flags,
            dim,
            k,
            m,
            p.l,
            p.dataset_hash & _U64_MASK,
            p.seed & _U64_MASK,
            float(index.const_quant.lo),
            float(index.const_quant.hi),
        )
    )
    w.write(np.ascontiguousarray(index.coarse.centroids, dtype="<f4").tobytes())
    if p.rotation:
        w.write(np.ascontiguousarray(index.pq.rotation, dtype="<f4").tobytes())
    w.write(np.ascontiguousarray(index.pq.codewords, dtype="<f4").tobytes())

    g = index.graph
    parts = [struct.pack("<II", int(g.entry_point), int(g.max_links))]
    levels = g.levels
    for i in range(k):
        layer_count = int(levels[i]) + 1
        parts.append(struct.pack("<I", layer_count))
        for layer in range(layer_count):
            lay = g.layers[layer]
            row = lay.adjacency[lay.local_of[i]]
            row = row[row >= 0]
            parts.append(struct.pack("<I", row.size))
            parts.append(row.astype("<u4").tobytes())
    w.write(b"".join(parts))

    records = np.zeros(index.n, dtype=_record_dtype(m))
    records["id"] = index.point_ids
    records["code"] = index.codes
    records["const"] = index.const_bytes
    offsets = index.region_offsets
    sizes = index.group_sizes
    for r in range(k):
        size = int(offsets[r + 1] - offsets[r])
        head = [struct.pack("<If", size, float(index.alphas[r]))]
        if p.grouping:
            head.append(index.neighbor_ids[r].astype("<u4").tobytes())
            head.append(index.norm_terms[r].astype("<f4").tobytes())
            head.append(sizes[r].astype("<u4").tobytes())
        w.write(b"".join(head))
        w.write(records[offsets[r] : offsets[r + 1]].tobytes())


def save_index(index, path):
    """Serialize the index to path; returns the number of bytes written."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        tee = _Tee(f)
        _write_body(tee, index)
        digest = tee.h.digest()
        f.write(digest)
        size = f.tell()
    os.replace(tmp, path)
    return size


class _Cursor:
    def __init__(self, buf):
        self.buf = buf
        self.o = 0

    def need(self, count):
        if self.o + count > len(self.buf):
            raise StorageError(
                f"index file truncated: need {count} bytes at offset {self.o}"
            )

    def take(self, count):
        self.need(count)
        out = self.buf[self.o : self.o + count]
        self.o += count
        return out

    def u32(self):
        return int.from_bytes(self.take(4), "little")

    def f32(self):
        return struct.unpack("<f", self.take(4))[0]

    def array(self, dtype, count):
        dtype = np.dtype(dtype)
        self.need(dtype.itemsize * count)
        out = np.frombuffer(self.buf, dtype=dtype, count=count, offset=self.o)
        self.o += dtype.itemsize * count
        return out


def load_index(path):
    """Read an index file back into memory, verifying its checksum."""
    with open(os.fspath(path), "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + _HEADER.size + 8:
        raise StorageError(f"index file too short ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise BadMagicError(f"not an index file (magic {raw[:4]!r})")
    digest = hashlib.blake2b(raw[:-8], digest_size=8).digest()
    if digest != raw[-8:]:
        raise ChecksumError("index file checksum mismatch")
    cur = _Cursor(raw[:-8])
    cur.take(4)  # magic
    (version, flags, dim, k, m, l, dataset_hash, build_seed, lo, hi) = _HEADER.unpack(
        cur.take(_HEADER.size)
    )
    if version != 1:
        raise VersionError(f"unsupported index version {version}")
    grouping = bool(flags & 1)
    rotation_flag = bool(flags & 2)
    if dim <= 0 or k <= 0 or m <= 0 or dim % m != 0:
        raise StorageError(f"corrupt header: dim={dim} k={k} m={m}")
    if grouping and not 0 < l < k:
        raise StorageError(f"corrupt header: l={l} out of range for k={k}")

    centroids = cur.array("<f4", k * dim).reshape(k, dim).copy()
    rotation = (
        cur.array("<f4", dim * dim).reshape(dim, dim).copy() if rotation_flag else None
    )
    codewords = (
        cur.array("<f4", m * CODEWORDS * (dim // m))
        .reshape(m, CODEWORDS, dim // m)
        .copy()
    )

    entry_point = cur.u32()
    max_links = cur.u32()
    if entry_point >= k or max_links < 2:
        raise StorageError("corrupt graph header")
    levels = np.empty(k, dtype=np.int32)
    tables = []
    for i in range(k):
        layer_count = cur.u32()
        if layer_count < 1:
            raise StorageError(f"corrupt graph: node {i} has no layers")
        levels[i] = layer_count - 1
        while len(tables) < layer_count:
            tables.append({})
        for layer in range(layer_count):
            degree = cur.u32()
            ids = cur.array("<u4", degree)
            if degree and int(ids.max()) >= k:
                raise StorageError(f"corrupt graph: neighbor id out of range")
            tables[layer][i] = [int(x) for x in ids]

    groups = l if grouping else 1
    alphas = np.zeros(k, dtype=np.float32)
    neighbor_ids = np.empty((k, l), dtype=np.int32) if grouping else None
    norm_terms = np.empty((k, l), dtype=np.float32) if grouping else None
    group_sizes = np.empty((k, groups), dtype=np.int32)
    rec_dtype = _record_dtype(m)
    chunks = []
    for r in range(k):
        size = cur.u32()
        alphas[r] = cur.f32()
        if grouping:
            neighbor_ids[r] = cur.array("<u4", l)
            norm_terms[r] = cur.array("<f4", l)
            group_sizes[r] = cur.array("<u4", l)
            if int(group_sizes[r].sum()) != size:
                raise StorageError(f"corrupt region {r}: group sizes do not add up")
        else:
            group_sizes[r, 0] = size
        chunks.append(cur.array(rec_dtype, size))
    if cur.o != len(cur.buf):
        raise StorageError(f"{len(cur.buf) - cur.o} unexpected trailing bytes")

    region_sizes = group_sizes.sum(axis=1, dtype=np.int64)
    region_offsets = np.zeros(k + 1, dtype=np.int64)
    np.cumsum(region_sizes, out=region_offsets[1:])
    records = (
        np.concatenate(chunks) if chunks else np.empty(0, dtype=rec_dtype)
    )
    if grouping and int(neighbor_ids.max(initial=0)) >= k:
        raise StorageError("corrupt region header: neighbor id out of range")

    from .graph import ProximityGraph, pack_adjacency

    coarse = CoarseCodebook(centroids)
    graph = ProximityGraph(
        centroids=coarse.centroids,
        levels=levels,
        layers=pack_adjacency(tables, k),
        entry_point=int(entry_point),
        max_links=int(max_links),
    )
    params = BuildParams(
        l=l,
        m=m,
        grouping=grouping,
        rotation=rotation_flag,
        seed=build_seed,
        dataset_hash=dataset_hash,
        version=version,
    )
    return GroupedIndex(
        coarse=coarse,
        graph=graph,
        pq=PQCodebook(codewords=codewords, rotation=rotation),
        const_quant=ConstQuantizer(lo=lo, hi=hi),
        params=params,
        alphas=alphas,
        neighbor_ids=neighbor_ids,
        norm_terms=norm_terms,
        group_sizes=group_sizes,
        region_offsets=region_offsets,
        point_ids=records["id"].astype(np.int32),
        codes=np.ascontiguousarray(records["code"]).reshape(-1, m),
        const_bytes=records["const"].copy(),
    )
