# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled dynamic-programming kernel for sequence alignment.

Mirrors _dtw_py.accumulate_and_backtrack exactly (same recurrence, same
tie-breaking), just without the Python-level inner loop.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def accumulate_and_backtrack(cnp.ndarray[cnp.float64_t, ndim=2] dist):
    cdef Py_ssize_t m1 = dist.shape[0]
    cdef Py_ssize_t m2 = dist.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] acc = np.empty((m1, m2), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double best, diag, up, left

    acc[0, 0] = dist[0, 0]
    for j in range(1, m2):
        acc[0, j] = acc[0, j - 1] + dist[0, j]
    for i in range(1, m1):
        acc[i, 0] = acc[i - 1, 0] + dist[i, 0]
        for j in range(1, m2):
            best = acc[i - 1, j - 1]  # diagonal preferred on ties
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = dist[i, j] + best

    cdef cnp.ndarray[cnp.int64_t, ndim=1] rev_i = np.empty(m1 + m2, dtype=np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] rev_j = np.empty(m1 + m2, dtype=np.int64)
    cdef Py_ssize_t n = 0
    i = m1 - 1
    j = m2 - 1
    rev_i[0] = i
    rev_j[0] = j
    n = 1
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
        rev_i[n] = i
        rev_j[n] = j
        n += 1
    return acc, np.ascontiguousarray(rev_i[:n][::-1]), np.ascontiguousarray(rev_j[:n][::-1])
