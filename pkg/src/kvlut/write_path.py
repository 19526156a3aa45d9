"""Write datapath: norm extraction, rotation, comparator quantization, packing.

A key k is stored as (indices, half(norm)): the unit-normalized key is
rotated, each rotated coordinate is mapped to its quantizer cell by a
comparator bank against the fixed boundaries, and the Euclidean norm is kept
as a 2-byte half float.  At d=128, b=3 a key packs to 48 + 2 = 50 bytes.  The
transform and comparator stages record zero multiplications; the norm
extractor's multiplies live in their own counter category.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook
from .errors import (CorruptCacheError, FormatError, InvalidDimensionError,
                     InvalidInputError)
from .opcount import OpCounter
from .transform import RotationSpec, inverse_rotate, rotate

__all__ = [
    "QuantizedKey",
    "quantize_key",
    "quantize_batch",
    "pack",
    "unpack",
    "packed_size",
    "dequantize_key",
    "write_kvq",
    "read_kvq",
    "load_key_matrix",
]


@dataclass(frozen=True)
class QuantizedKey:
    """One stored key: per-coordinate cell indices plus a half-precision norm."""

    indices: np.ndarray
    norm: np.float16

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.uint8)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "norm", np.float16(self.norm))
        if self.norm < 0:
            raise InvalidInputError(f"key norm must be non-negative, got {self.norm}")


def _count_norm_ops(counter: OpCounter | None, d: int, n_keys: int = 1) -> None:
    # d squares + (d-1)-term sum for ||k||^2, then d multiplies by 1/n to
    # normalize; all charged to the norm extractor, never to the transform.
    if counter is not None:
        counter.add("norm", mults=n_keys * 2 * d, adds=n_keys * (d - 1))


def _comparator_indices(y: np.ndarray, cb: Codebook, mode: str,
                        counter: OpCounter | None, n_keys: int) -> np.ndarray:
    """Map rotated coordinates to cells; ties go to the upper cell.

    "flat" compares every coordinate against all 2^b - 1 boundaries, the
    hardware-faithful bank; "binary" uses a b-step bisection.  The two are
    independent routes that must agree.
    """
    d = cb.d
    if mode == "flat":
        idx = (y[..., None] >= cb.boundaries).sum(axis=-1).astype(np.uint8)
        if counter is not None:
            counter.add("quantize", comps=n_keys * d * (cb.levels - 1))
    elif mode == "binary":
        idx = np.searchsorted(cb.boundaries, y, side="right").astype(np.uint8)
        if counter is not None:
            counter.add("quantize", comps=n_keys * d * cb.b)
    else:
        raise InvalidInputError(f"unknown comparator mode {mode!r}")
    return idx


def quantize_key(k: np.ndarray, spec: RotationSpec, cb: Codebook,
                 counter: OpCounter | None = None, *,
                 comparator: str = "flat") -> QuantizedKey:
    """Quantize one key through the write datapath.

    Zero-norm keys store norm 0 with the center-cell indices; the read path
    then scores them as exactly 0.
    """
    k = np.asarray(k, dtype=np.float64)
    if k.ndim != 1 or k.size != cb.d:
        raise InvalidDimensionError(
            f"expected a length-{cb.d} key, got shape {k.shape}")
    if cb.d != spec.d:
        raise InvalidDimensionError(
            f"codebook dimension {cb.d} != rotation dimension {spec.d}")
    if not np.all(np.isfinite(k)):
        raise InvalidInputError("key contains non-finite values")

    n = math.sqrt(float(k @ k))
    _count_norm_ops(counter, cb.d)
    y = rotate(spec, k / n if n > 0.0 else k, counter)
    idx = _comparator_indices(y, cb, comparator, counter, 1)
    return QuantizedKey(indices=idx, norm=np.float16(n))


def quantize_batch(keys: np.ndarray, spec: RotationSpec, cb: Codebook,
                   counter: OpCounter | None = None, *,
                   comparator: str = "binary") -> tuple[np.ndarray, np.ndarray]:
    """Vectorized write path over N keys: (N, d) -> (indices (N, d), norms (N,)).

    Identical per-key results and counter deltas to N quantize_key calls.
    """
    keys = np.asarray(keys, dtype=np.float64)
    if keys.ndim != 2 or keys.shape[1] != cb.d:
        raise InvalidDimensionError(
            f"expected an (N, {cb.d}) key matrix, got shape {keys.shape}")
    if cb.d != spec.d:
        raise InvalidDimensionError(
            f"codebook dimension {cb.d} != rotation dimension {spec.d}")
    if not np.all(np.isfinite(keys)):
        raise InvalidInputError("key matrix contains non-finite values")

    norms = np.linalg.norm(keys, axis=1)
    _count_norm_ops(counter, cb.d, keys.shape[0])
    unit = np.where(norms[:, None] > 0.0, keys / np.where(norms == 0.0, 1.0, norms)[:, None], keys)
    y = rotate(spec, unit, counter)
    idx = _comparator_indices(y, cb, comparator, counter, keys.shape[0])
    return idx, norms


def dequantize_key(qk: QuantizedKey, spec: RotationSpec, cb: Codebook,
                   counter: OpCounter | None = None) -> np.ndarray:
    """Reference reconstruction: inverse-rotate the centroids, rescale by norm.

    The read path never runs this; it exists as the conventional-decoder
    oracle that table lookups are checked against.  The counter charges the
    inverse transform's additions and the d norm-scaling multiplies.
    """
    if qk.indices.size != spec.d or cb.d != spec.d:
        raise InvalidDimensionError(
            f"key has {qk.indices.size} indices, codebook d={cb.d}, rotation d={spec.d}")
    if counter is not None:
        counter.add("norm", mults=cb.d)
    return inverse_rotate(spec, cb.centroids[qk.indices], counter) * float(qk.norm)


# -- packed record --------------------------------------------------------

def packed_size(d: int, b: int) -> int:
    """Bytes per stored key: ceil(d*b/8) index bytes + 2 norm bytes."""
    return (d * b + 7) // 8 + 2


def pack(qk: QuantizedKey, b: int) -> bytes:
    """Pack indices at b bits each, little-endian bit order, then half(norm)."""
    vals = qk.indices
    if np.any(vals >= (1 << b)):
        raise FormatError(f"index out of range for b={b}")
    bits = ((vals[:, None] >> np.arange(b)) & 1).astype(np.uint8).ravel()
    payload = np.packbits(bits, bitorder="little").tobytes()
    return payload + struct.pack("<e", float(qk.norm))


def unpack(data: bytes, d: int, b: int) -> QuantizedKey:
    """Inverse of pack for a d-coordinate, b-bit record."""
    expected = packed_size(d, b)
    if len(data) != expected:
        raise FormatError(
            f"packed key for d={d}, b={b} must be {expected} bytes, got {len(data)}")
    bits = np.unpackbits(np.frombuffer(data[:-2], dtype=np.uint8),
                         bitorder="little")[:d * b]
    vals = bits.reshape(d, b) @ (1 << np.arange(b))
    (norm,) = struct.unpack("<e", data[-2:])
    return QuantizedKey(indices=vals.astype(np.uint8), norm=np.float16(norm))


# -- KV-cache container ---------------------------------------------------
#
# Layout: 18-byte header (magic "KVQC", version u8, b u8, d u32, T u32,
# layer_id u32, little-endian) then T packed records.

_KVQ_MAGIC = b"KVQC"
_KVQ_VERSION = 1
_KVQ_HEADER = struct.Struct("<4sBBIII")


def write_kvq(path, keys: list[QuantizedKey], d: int, b: int,
              layer_id: int = 0) -> None:
    for qk in keys:
        if qk.indices.size != d:
            raise InvalidDimensionError(
                f"key has {qk.indices.size} indices, cache expects {d}")
    header = _KVQ_HEADER.pack(_KVQ_MAGIC, _KVQ_VERSION, b, d, len(keys), layer_id)
    with open(path, "wb") as fh:
        fh.write(header)
        for qk in keys:
            fh.write(pack(qk, b))


def read_kvq(path) -> tuple[list[QuantizedKey], int, int, int]:
    """Read a .kvq cache; returns (keys, d, b, layer_id)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _KVQ_HEADER.size:
        raise FormatError(f"cache file truncated: {len(data)} bytes")
    magic, version, b, d, count, layer_id = _KVQ_HEADER.unpack_from(data)
    if magic != _KVQ_MAGIC:
        raise CorruptCacheError(f"bad cache magic {magic!r}")
    if version != _KVQ_VERSION:
        raise CorruptCacheError(f"unsupported cache version {version}")
    record = packed_size(d, b)
    expected = _KVQ_HEADER.size + count * record
    if len(data) != expected:
        raise FormatError(
            f"cache for d={d}, b={b}, T={count} must be {expected} bytes, "
            f"got {len(data)}")
    keys = []
    for i in range(count):
        start = _KVQ_HEADER.size + i * record
        keys.append(unpack(data[start:start + record], d, b))
    return keys, d, b, layer_id


# -- key-matrix import ----------------------------------------------------

def load_key_matrix(path, d: int | None = None) -> np.ndarray:
    """Load an (N, d) key matrix from .npy, whitespace text, or raw doubles.

    Raw files are row-major float64 and need d to recover the shape.
    """
    name = str(path)
    if name.endswith(".npy"):
        mat = np.load(path)
    elif name.endswith((".txt", ".csv")):
        mat = np.loadtxt(path, delimiter="," if name.endswith(".csv") else None)
    else:
        if d is None:
            raise FormatError("raw key matrices need the dimension to recover rows")
        flat = np.fromfile(path, dtype="<f8")
        if flat.size == 0 or flat.size % d:
            raise FormatError(
                f"raw key file holds {flat.size} doubles, not a multiple of d={d}")
        mat = flat.reshape(-1, d)
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    if d is not None and mat.shape[1] != d:
        raise InvalidDimensionError(
            f"key matrix is {mat.shape[1]}-dimensional, expected {d}")
    if not np.all(np.isfinite(mat)):
        raise InvalidInputError("key matrix contains non-finite values")
    return mat
