"""Flat-vector arithmetic, sample statistics and seeded random streams.

Gradient vectors are plain 1-D ``float64`` numpy arrays.  Every function
here validates its inputs, never mutates them, and returns fresh arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

GradVec = np.ndarray


def as_gradvec(values) -> GradVec:
    """Convert ``values`` to a finite 1-D float64 vector (copying)."""
    v = np.array(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


def stack(vecs: Sequence) -> np.ndarray:
    """Stack vectors into an ``(n, d)`` matrix, rejecting ragged input."""
    if len(vecs) == 0:
        raise ValueError("empty vector sequence")
    if isinstance(vecs, np.ndarray) and vecs.ndim == 2:
        mat = np.asarray(vecs, dtype=np.float64)
    else:
        rows = [np.asarray(v, dtype=np.float64) for v in vecs]
        dims = {r.shape for r in rows}
        if len(dims) != 1 or rows[0].ndim != 1:
            raise ValueError(f"vectors do not share one dimension: {sorted(dims)}")
        mat = np.vstack(rows)
    if not np.all(np.isfinite(mat)):
        raise ValueError("vectors have non-finite entries")
    return mat


def weighted_mean(vecs: Sequence, weights: Sequence[float]) -> GradVec:
    mat = stack(vecs)
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size != mat.shape[0]:
        raise ValueError(f"{mat.shape[0]} vectors but {w.size} weights")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights sum to zero")
    return (w / total) @ mat


@dataclass(frozen=True)
class SampleStats:
    mean: GradVec
    variance_trace: float
    count: int


def sample_stats(vecs: Sequence) -> SampleStats:
    """Mean and trace of the unbiased (``count - 1``) sample covariance."""
    mat = stack(vecs)
    count = mat.shape[0]
    mean = mat.mean(axis=0)
    if count == 1:
        return SampleStats(mean, 0.0, 1)
    var_trace = float(np.sum((mat - mean) ** 2) / (count - 1))
    return SampleStats(mean, var_trace, count)


def norm_sq(v) -> float:
    v = np.asarray(v, dtype=np.float64)
    return float(v @ v)


def derive_stream(master_seed: int, *stream_id: int) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(master_seed, *stream_id)``.

    Streams are order independent: the draws of stream ``(s, 3)`` do not
    depend on whether ``(s, 0..2)`` were created or consumed first.  Extra
    ids nest, e.g. ``derive_stream(seed, client, round)``.
    """
    if master_seed < 0 or any(i < 0 for i in stream_id):
        raise ValueError("seeds and stream ids must be non-negative")
    seq = np.random.SeedSequence(int(master_seed), spawn_key=tuple(int(i) for i in stream_id))
    return np.random.Generator(np.random.Philox(seq))
