"""Conventional dequantize-and-dot scoring, kept as a test oracle only.

This is the path the lookup read path replaces: reconstruct each stored key
(inverse rotation, norm rescale) and take a dense dot product with the raw
query.  Production scoring must never import from here; the module exists so
equivalence and operation-count comparisons run against an independently
structured route.
"""

from __future__ import annotations

import numpy as np

from .codebook import Codebook
from .errors import InvalidDimensionError, InvalidInputError
from .opcount import OpCounter
from .transform import RotationSpec
from .write_path import QuantizedKey, dequantize_key

__all__ = ["score_sequence_reference"]


def score_sequence_reference(q: np.ndarray, cache: list[QuantizedKey],
                             spec: RotationSpec, cb: Codebook
                             ) -> tuple[np.ndarray, OpCounter]:
    """Score by reconstructing every key: T*d score multiplications.

    Per key the counter picks up the inverse transform's additions, the d
    reconstruction rescales (norm category), and a d-multiply dot product
    (score category); the score-category multiplication total is exactly T*d.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.ndim != 1 or q.size != cb.d:
        raise InvalidDimensionError(
            f"expected a length-{cb.d} query, got shape {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidInputError("query contains non-finite values")
    counter = OpCounter()
    scores = np.empty(len(cache))
    for t, qk in enumerate(cache):
        rec = dequantize_key(qk, spec, cb, counter)
        scores[t] = q @ rec
        counter.add("score", mults=cb.d, adds=cb.d - 1)
    return scores, counter
