"""SBW1 weight files.

Layout (little endian)::

    magic "SBW1" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | utf-8 name | u8 ndim | u32 dims[ndim] | u8 dtype (0=f32) | payload

Parameters come first (shared tensors once, under their canonical name),
then BN running statistics as ``<bn>.running_mean`` / ``<bn>.running_var``.
"""

from __future__ import annotations

import struct

import numpy as np

WEIGHT_MAGIC = b"SBW1"
VERSION = 1
DTYPES = {0: np.dtype("<f4")}
RUNNING_SUFFIXES = (".running_mean", ".running_var")


class DataError(ValueError):
    code = 3


class WeightFileError(DataError):
    pass


class BadMagic(WeightFileError):
    code = 10


class Truncated(WeightFileError):
    code = 11


class UnknownDtype(WeightFileError):
    code = 12


class ShapeMismatch(WeightFileError):
    code = 13


def write_records(tensors: dict, magic: bytes = WEIGHT_MAGIC) -> bytes:
    parts = [magic, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(struct.pack("<B", 0))
        parts.append(arr.tobytes())
    return b"".join(parts)


def read_records(buf: bytes, magic: bytes = WEIGHT_MAGIC):
    """Parse tensor records; return ``(name -> array, offset after last record)``."""
    if len(buf) < 4 or buf[:4] != magic:
        raise BadMagic(f"expected magic {magic!r}, got {bytes(buf[:4])!r}")
    off = 4

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(buf):
            raise Truncated(f"file ends inside header at byte {off}")
        vals = struct.unpack_from(fmt, buf, off)
        off += size
        return vals

    version, count = take("<II")
    if version != VERSION:
        raise WeightFileError(f"unsupported version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = take("<H")
        if off + nlen > len(buf):
            raise Truncated("file ends inside a tensor name")
        name = bytes(buf[off:off + nlen]).decode("utf-8")
        off += nlen
        (ndim,) = take("<B")
        dims = take(f"<{ndim}I") if ndim else ()
        (code,) = take("<B")
        if code not in DTYPES:
            raise UnknownDtype(f"{name}: dtype code {code}")
        dt = DTYPES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        if off + nbytes > len(buf):
            raise Truncated(f"{name}: payload needs {nbytes} bytes, {len(buf) - off} left")
        out[name] = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=off).reshape(dims).copy()
        off += nbytes
    return out, off


def store_records(store) -> dict:
    recs = {name: v.data for name, v in store.params.items()}
    for name, st in store.bn_states.items():
        recs[name + ".running_mean"] = st.running_mean
        recs[name + ".running_var"] = st.running_var
    return recs


def save_weights(store) -> bytes:
    return write_records(store_records(store))


def read_weight_file(buf: bytes) -> dict:
    recs, off = read_records(buf)
    if off != len(buf):
        raise WeightFileError(f"{len(buf) - off} trailing bytes after last tensor")
    return recs


def load_weights(buf: bytes, store) -> None:
    """Fill ``store`` (built from the matching network config) from ``buf``.

    Share groups come from the store itself: each group's canonical name is
    the only record for it.
    """
    recs = read_weight_file(buf)
    expected = {}
    for name, v in store.params.items():
        expected[name] = v.shape
    for name, st in store.bn_states.items():
        expected[name + ".running_mean"] = st.running_mean.shape
        expected[name + ".running_var"] = st.running_var.shape
    extra = sorted(set(recs) - set(expected))
    missing = sorted(set(expected) - set(recs))
    if extra or missing:
        raise ShapeMismatch(f"records do not match config: missing {missing[:3]}, unexpected {extra[:3]}")
    for name, shape in expected.items():
        if recs[name].shape != tuple(shape):
            raise ShapeMismatch(f"{name}: file has {recs[name].shape}, config needs {tuple(shape)}")
    for name, v in store.params.items():
        v.data[...] = recs[name]
    for name, st in store.bn_states.items():
        st.running_mean[...] = recs[name + ".running_mean"]
        st.running_var[...] = recs[name + ".running_var"]


def param_payload_bytes(buf: bytes) -> int:
    """Payload bytes of parameter records, running statistics excluded."""
    recs = read_weight_file(buf)
    return sum(a.nbytes for n, a in recs.items() if not n.endswith(RUNNING_SUFFIXES))
