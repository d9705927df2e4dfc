# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: DTW accumulation and autocorrelation peak search."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def dtw_accumulate(double[:, :] cost):
    """Min-total-cost monotone alignment with steps (1,0), (0,1), (1,1).

    Ties on accumulated cost are broken by shorter path length, then by step
    preference diagonal > vertical > horizontal. Returns (total_cost,
    path_length) of the winning path, endpoints included.
    """
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t m = cost.shape[1]
    cdef cnp.ndarray[double, ndim=2] acc = np.empty((n, m), dtype=np.float64)
    cdef cnp.ndarray[long, ndim=2] plen = np.empty((n, m), dtype=np.int64)
    cdef double[:, :] a = acc
    cdef long[:, :] L = plen
    cdef Py_ssize_t i, j
    cdef double best, cand
    cdef long blen

    a[0, 0] = cost[0, 0]
    L[0, 0] = 1
    for j in range(1, m):
        a[0, j] = a[0, j - 1] + cost[0, j]
        L[0, j] = j + 1
    for i in range(1, n):
        a[i, 0] = a[i - 1, 0] + cost[i, 0]
        L[i, 0] = i + 1
        for j in range(1, m):
            best = a[i - 1, j - 1]
            blen = L[i - 1, j - 1]
            cand = a[i - 1, j]
            if cand < best or (cand == best and L[i - 1, j] < blen):
                best = cand
                blen = L[i - 1, j]
            cand = a[i, j - 1]
            if cand < best or (cand == best and L[i, j - 1] < blen):
                best = cand
                blen = L[i, j - 1]
            a[i, j] = best + cost[i, j]
            L[i, j] = blen + 1
    return a[n - 1, m - 1], L[n - 1, m - 1]


def autocorr_curve(double[:] frame, Py_ssize_t lag_min, Py_ssize_t lag_max):
    """Normalized autocorrelation for each lag in [lag_min, lag_max].

    Normalization is the geometric mean of the energies of the two windows
    being correlated, so each value lies in [-1, 1] (or -2 for degenerate
    windows). Returns a float64 array of length lag_max - lag_min + 1.
    """
    cdef Py_ssize_t n = frame.shape[0]
    cdef Py_ssize_t lag, k
    cdef double s, e0, e1
    cdef cnp.ndarray[double, ndim=1] out = np.full(lag_max - lag_min + 1, -2.0)
    cdef double[:] o = out

    for lag in range(lag_min, lag_max + 1):
        s = 0.0
        e0 = 0.0
        e1 = 0.0
        for k in range(n - lag):
            s += frame[k] * frame[k + lag]
            e0 += frame[k] * frame[k]
            e1 += frame[k + lag] * frame[k + lag]
        if e0 > 0.0 and e1 > 0.0:
            o[lag - lag_min] = s / ((e0 * e1) ** 0.5)
    return out
