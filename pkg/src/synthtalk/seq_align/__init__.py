"""Dynamic time warping between two feature sequences.

Aligns two variable-length sequences of equal-width feature vectors into
two equal-length sequences by the minimum-cost monotone pairing. The hot
recurrence runs in a compiled Cython kernel when available and falls back
to a pure NumPy implementation otherwise; set ``SYNTHTALK_DTW_BACKEND`` to
``cython`` or ``python`` to force one (``auto`` picks compiled if built).

All functions are pure and safe to call concurrently.
"""

import os
from dataclasses import dataclass

import numpy as np

from . import _dtw_py

try:
    from . import _dtw_cy
except ImportError:  # extension not built
    _dtw_cy = None


def _select_backend():
    choice = os.environ.get("SYNTHTALK_DTW_BACKEND", "auto").lower()
    if choice not in ("auto", "cython", "python"):
        raise ValueError(f"unknown DTW backend {choice!r}")
    if choice == "python":
        return _dtw_py, "python"
    if choice == "cython":
        if _dtw_cy is None:
            raise ImportError("cython DTW kernel requested but not built")
        return _dtw_cy, "cython"
    if _dtw_cy is not None:
        return _dtw_cy, "cython"
    return _dtw_py, "python"


_BACKEND_MODULE, BACKEND = _select_backend()


@dataclass(frozen=True)
class AlignmentPath:
    """Monotone alignment between two sequences.

    ``pairs`` is an ordered list of 0-based index pairs (i, j) running from
    (0, 0) to (m1-1, m2-1); each step advances i, j, or both by one.
    ``cost`` is the sum of the ground metric over the pairs.
    """

    pairs: tuple
    cost: float

    def __len__(self):
        return len(self.pairs)


def as_feature_sequence(seq) -> np.ndarray:
    """Coerce input to a (frames, width) float64 array.

    Accepts a 1-D sequence of scalars (treated as width 1) or a 2-D array
    of frame vectors. Rejects empty, ragged, or non-finite input.
    """
    arr = np.asarray(seq, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"feature sequence must be 1-D or 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"feature sequence must be nonempty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature sequence contains non-finite values")
    return arr


def _ground_distance_matrix(a: np.ndarray, b: np.ndarray, metric) -> np.ndarray:
    if callable(metric):
        m1, m2 = a.shape[0], b.shape[0]
        dist = np.empty((m1, m2), dtype=np.float64)
        for i in range(m1):
            for j in range(m2):
                dist[i, j] = float(metric(a[i], b[j]))
        if np.any(dist < 0):
            raise ValueError("ground metric returned a negative distance")
        return dist
    if metric == "euclidean":
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt(np.sum(diff * diff, axis=-1))
    if metric == "l1":
        diff = a[:, None, :] - b[None, :, :]
        return np.sum(np.abs(diff), axis=-1)
    raise ValueError(f"unknown ground metric {metric!r}")


def dtw_cost_matrix(a, b, metric="euclidean") -> np.ndarray:
    """Cumulative-cost matrix of the DTW recurrence.

    D[i, j] = dist(a_i, b_j) + min(D[i-1, j], D[i, j-1], D[i-1, j-1]),
    with the usual boundary accumulation; D[-1, -1] is the optimal
    alignment cost returned by :func:`dtw_align`.
    """
    a = as_feature_sequence(a)
    b = as_feature_sequence(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"width mismatch: {a.shape[1]} vs {b.shape[1]}")
    dist = _ground_distance_matrix(a, b, metric)
    acc, _, _ = _BACKEND_MODULE.accumulate_and_backtrack(dist)
    return acc


def dtw_align(a, b, metric="euclidean"):
    """Minimum-cost monotone alignment of two sequences.

    :param a: (m1, D) feature sequence (or 1-D scalars)
    :param b: (m2, D) feature sequence, same width
    :param metric: "euclidean", "l1", or a callable (frame, frame) -> float
    :return: (AlignmentPath, aligned_a, aligned_b). The aligned outputs
        both have length N = len(path) >= max(m1, m2), formed by
        replicating each input frame once per path pair it appears in.

    Ties in the recurrence prefer the diagonal step, then (i-1, j), then
    (i, j-1), so results are deterministic.
    """
    a = as_feature_sequence(a)
    b = as_feature_sequence(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"width mismatch: {a.shape[1]} vs {b.shape[1]}")
    dist = _ground_distance_matrix(a, b, metric)
    acc, path_i, path_j = _BACKEND_MODULE.accumulate_and_backtrack(dist)
    pairs = tuple(zip(path_i.tolist(), path_j.tolist()))
    path = AlignmentPath(pairs=pairs, cost=float(acc[-1, -1]))
    return path, a[path_i], b[path_j]
