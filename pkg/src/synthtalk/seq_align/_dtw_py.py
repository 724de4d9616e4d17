"""Pure NumPy dynamic-programming kernel for sequence alignment.

Fallback used when the compiled extension is unavailable. Both kernels
share the same contract: given a dense pairwise distance matrix, compute
the accumulated-cost matrix and backtrack the optimal monotone path.
"""

import numpy as np


def accumulate_and_backtrack(dist: np.ndarray):
    """Run the DTW recurrence over a distance matrix and backtrack.

    :param dist: (m1, m2) pairwise ground-metric matrix, float64
    :return: (acc, path_i, path_j) where acc is the (m1, m2) cumulative
        cost matrix and path_i/path_j are int64 index arrays of the
        minimum-cost monotone path from (0, 0) to (m1-1, m2-1).
    """
    m1, m2 = dist.shape
    acc = np.empty((m1, m2), dtype=np.float64)
    acc[0, 0] = dist[0, 0]
    for j in range(1, m2):
        acc[0, j] = acc[0, j - 1] + dist[0, j]
    for i in range(1, m1):
        acc[i, 0] = acc[i - 1, 0] + dist[i, 0]
        row = acc[i]
        prev = acc[i - 1]
        d = dist[i]
        for j in range(1, m2):
            best = prev[j - 1]  # diagonal preferred on ties
            if prev[j] < best:
                best = prev[j]
            if row[j - 1] < best:
                best = row[j - 1]
            row[j] = d[j] + best

    # Backtrack with the same tie-breaking order: diagonal, then (i-1, j),
    # then (i, j-1).
    i, j = m1 - 1, m2 - 1
    rev_i, rev_j = [i], [j]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            up = acc[i - 1, j]
            left = acc[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        rev_i.append(i)
        rev_j.append(j)
    path_i = np.array(rev_i[::-1], dtype=np.int64)
    path_j = np.array(rev_j[::-1], dtype=np.int64)
    return acc, path_i, path_j
