"""Readers and writers for the .fvecs / .bvecs / .ivecs vector file family.

Every record is a little-endian int32 dimension header followed by that many
elements. The element width is what distinguishes the three flavors:

    float32  .fvecs
    uint8    .bvecs   (widened to float32 in [0, 255] on read)
    int32    .ivecs   (kept as int32; used for ground-truth id lists)

All records in a file must share one dimension. Parse errors name the byte
offset where the file stops making sense.
"""

import numpy as np

from .errors import VecsFormatError

ELEMENT_KINDS = {
    "float32": np.dtype("<f4"),
    "uint8": np.dtype("u1"),
    "int32": np.dtype("<i4"),
}

_EXT_KIND = {".fvecs": "float32", ".bvecs": "uint8", ".ivecs": "int32"}


def kind_for_path(path) -> str:
    path = str(path)
    for ext, kind in _EXT_KIND.items():
        if path.endswith(ext):
            return kind
    raise VecsFormatError(f"{path}: unknown vector file extension")


def read_vecs(path, element_kind=None):
    """Read a whole vecs file into a (count, dim) array.

    The element kind defaults to whatever the file extension implies. float32
    and uint8 payloads come back as float32, int32 payloads stay int32 so ids
    survive exactly.
    """
    if element_kind is None:
        element_kind = kind_for_path(path)
    if element_kind not in ELEMENT_KINDS:
        raise ValueError(f"unknown element kind {element_kind!r}")
    el = ELEMENT_KINDS[element_kind]
    with open(path, "rb") as f:
        raw = f.read()
    out_dtype = np.int32 if element_kind == "int32" else np.float32
    if len(raw) == 0:
        return np.empty((0, 0), dtype=out_dtype)
    if len(raw) < 4:
        raise VecsFormatError(f"{path}: truncated dimension header at byte 0")
    dim = int(np.frombuffer(raw, "<i4", count=1)[0])
    if dim <= 0:
        raise VecsFormatError(f"{path}: nonpositive dimension {dim} at byte 0")
    rec_size = 4 + dim * el.itemsize
    if len(raw) % rec_size != 0:
        _walk_for_error(path, raw, dim, el)
    rec = np.dtype([("dim", "<i4"), ("vec", el, (dim,))])
    table = np.frombuffer(raw, dtype=rec)
    bad = np.flatnonzero(table["dim"] != dim)
    if bad.size:
        i = int(bad[0])
        raise VecsFormatError(
            f"{path}: record {i} at byte {i * rec_size} has dimension "
            f"{int(table['dim'][i])}, expected {dim}"
        )
    data = np.ascontiguousarray(table["vec"])
    if element_kind == "uint8":
        data = data.astype(np.float32)
    elif element_kind == "float32":
        data = data.astype(np.float32, copy=False)
        finite = np.isfinite(data)
        if not finite.all():
            i = int(np.flatnonzero(~finite.all(axis=1))[0])
            raise VecsFormatError(
                f"{path}: record {i} at byte {i * rec_size} has non-finite values"
            )
    else:
        data = data.astype(np.int32, copy=False)
    return data


def _walk_for_error(path, raw, first_dim, el):
    """Walk records to pinpoint why the byte count does not divide evenly."""
    off, i = 0, 0
    while off < len(raw):
        if len(raw) - off < 4:
            raise VecsFormatError(
                f"{path}: truncated dimension header of record {i} at byte {off}"
            )
        d = int(np.frombuffer(raw, "<i4", count=1, offset=off)[0])
        if d <= 0:
            raise VecsFormatError(f"{path}: nonpositive dimension {d} at byte {off}")
        if d != first_dim:
            raise VecsFormatError(
                f"{path}: record {i} at byte {off} has dimension {d}, "
                f"expected {first_dim}"
            )
        need = 4 + d * el.itemsize
        if len(raw) - off < need:
            raise VecsFormatError(f"{path}: truncated record {i} at byte {off}")
        off += need
        i += 1
    raise VecsFormatError(f"{path}: malformed payload")  # pragma: no cover


def write_vecs(path, data, element_kind=None):
    """Write a (count, dim) array as a vecs file. Inverse of read_vecs.

    As with read_vecs the element kind follows the file extension unless
    overridden.
    """
    if element_kind is None:
        element_kind = kind_for_path(path)
    if element_kind not in ELEMENT_KINDS:
        raise ValueError(f"unknown element kind {element_kind!r}")
    el = ELEMENT_KINDS[element_kind]
    arr = np.asarray(data)
    if arr.ndim != 2:
        raise ValueError(f"expected 2-d array, got shape {arr.shape}")
    n, dim = arr.shape
    if n > 0 and dim == 0:
        raise ValueError("cannot write records of dimension 0")
    if element_kind == "uint8":
        vals = np.asarray(arr, dtype=np.float64)
        if ((vals < 0) | (vals > 255) | (vals != np.floor(vals))).any():
            raise ValueError("uint8 output requires integer values in [0, 255]")
        payload = arr.astype(np.uint8)
    elif element_kind == "int32":
        vals = np.asarray(arr, dtype=np.float64)
        if (vals != np.floor(vals)).any():
            raise ValueError("int32 output requires integer values")
        payload = arr.astype(np.int32)
    else:
        payload = arr.astype(np.float32)
        if not np.isfinite(payload).all():
            raise ValueError("float32 output requires finite values")
    rec = np.dtype([("dim", "<i4"), ("vec", el, (dim,))])
    table = np.empty(n, dtype=rec)
    table["dim"] = dim
    table["vec"] = payload
    with open(path, "wb") as f:
        f.write(table.tobytes())
