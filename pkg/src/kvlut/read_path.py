"""Read datapath: per-query table precomputation and lookup-accumulate scoring.

Scores come out of stored keys without ever reconstructing them.  Because the
rotation is shared by queries and keys, <q, k> = <Rq, Rk>, and with each
rotated key coordinate replaced by a centroid the inner product collapses to
d table lookups, an adder tree, and one norm multiply:

    score = (sum_i P[i][idx_i]) * ||k||,   P[i][j] = q_rot[i] * c_j.

Per query that is d*2^b multiplications once, then one per key, against T*d
for dequantize-and-dot.  The conventional path lives in the reference module
and is used only as a test oracle; nothing here touches inverse rotation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .codebook import Codebook
from .errors import CorruptCacheError, InvalidDimensionError, InvalidInputError
from .opcount import OpCounter
from .transform import RotationSpec, rotate
from .write_path import QuantizedKey

__all__ = [
    "PrecomputedTable",
    "Fp16Score",
    "precompute_table",
    "score_key",
    "score_key_fp16",
    "score_sequence",
]


@dataclass(frozen=True)
class PrecomputedTable:
    """Per-query lookup table: entries[i, j] = q_rot[i] * centroid[j]."""

    d: int
    b: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.shape != (self.d, 1 << self.b):
            raise InvalidDimensionError(
                f"table must be {self.d} x {1 << self.b}, got {entries.shape}")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)


class Fp16Score(NamedTuple):
    """Half-precision score plus a saturation flag (overflow to half inf)."""

    value: np.float16
    saturated: bool


def precompute_table(q: np.ndarray, spec: RotationSpec, cb: Codebook,
                     counter: OpCounter | None = None) -> PrecomputedTable:
    """Rotate the query and form the d x 2^b product table, once per query."""
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size != cb.d:
        raise InvalidDimensionError(
            f"expected a length-{cb.d} query, got shape {q.shape}")
    if cb.d != spec.d:
        raise InvalidDimensionError(
            f"codebook dimension {cb.d} != rotation dimension {spec.d}")
    if not np.all(np.isfinite(q)):
        raise InvalidInputError("query contains non-finite values")
    q_rot = rotate(spec, q, counter)
    entries = q_rot[:, None] * cb.centroids[None, :]
    if counter is not None:
        counter.add("table", mults=cb.d * cb.levels)
    return PrecomputedTable(d=cb.d, b=cb.b, entries=entries)


def _gather(tbl: PrecomputedTable, qk: QuantizedKey) -> np.ndarray:
    idx = qk.indices
    if idx.size != tbl.d:
        raise InvalidDimensionError(
            f"key has {idx.size} indices, table expects {tbl.d}")
    if np.any(idx >= (1 << tbl.b)):
        raise CorruptCacheError(
            f"cache index exceeds 2^{tbl.b} - 1")
    return tbl.entries[np.arange(tbl.d), idx]


def score_key(tbl: PrecomputedTable, qk: QuantizedKey,
              counter: OpCounter | None = None) -> float:
    """Score one stored key: d lookups, d-1 additions, 1 norm multiply."""
    picked = _gather(tbl, qk)
    if counter is not None:
        counter.add("score", mults=1, adds=tbl.d - 1, lookups=tbl.d)
    return float(picked.sum() * float(qk.norm))


def score_key_fp16(tbl: PrecomputedTable, qk: QuantizedKey,
                   counter: OpCounter | None = None) -> Fp16Score:
    """Bit-accurate half-precision scoring.

    Table reads, every partial sum of the balanced adder tree (leaf order =
    coordinate order), and the final norm product each round to half
    precision, round-to-nearest-even.  Overflow beyond half range propagates
    to a non-finite result, reported via the saturation flag.
    """
    with np.errstate(over="ignore"):
        acc = _gather(tbl, qk).astype(np.float16)
        while acc.size > 1:
            acc = acc[0::2] + acc[1::2]
        value = acc[0] * np.float16(qk.norm)
    if counter is not None:
        counter.add("score", mults=1, adds=tbl.d - 1, lookups=tbl.d)
    return Fp16Score(value=value, saturated=not math.isfinite(float(value)))


def score_sequence(q: np.ndarray, cache: list[QuantizedKey], spec: RotationSpec,
                   cb: Codebook, mode: str = "double") -> tuple[np.ndarray, OpCounter]:
    """Score a query against a whole cache: one table, then T lookup passes.

    The returned counter's multiplications in {table, score} total exactly
    d*2^b + T.  In "fp16" mode scores are half precision and saturated
    entries surface as non-finite values.
    """
    counter = OpCounter()
    tbl = precompute_table(q, spec, cb, counter)
    if mode == "double":
        scores = np.array([score_key(tbl, qk, counter) for qk in cache])
    elif mode == "fp16":
        scores = np.array([score_key_fp16(tbl, qk, counter).value for qk in cache],
                          dtype=np.float16)
    else:
        raise InvalidInputError(f"unknown scoring mode {mode!r}")
    return scores, counter
