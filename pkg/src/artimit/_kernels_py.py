"""Pure-Python fallbacks for the compiled kernels; identical semantics."""

import numpy as np


def dtw_accumulate(cost):
    """See the compiled version: min total cost, ties broken by path length
    then diagonal > vertical > horizontal. Returns (total_cost, path_length)."""
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    acc = np.empty((n, m))
    plen = np.empty((n, m), dtype=np.int64)
    acc[0, 0] = cost[0, 0]
    plen[0, 0] = 1
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
        plen[0, j] = j + 1
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        plen[i, 0] = i + 1
        for j in range(1, m):
            best, blen = acc[i - 1, j - 1], plen[i - 1, j - 1]
            if acc[i - 1, j] < best or (acc[i - 1, j] == best and plen[i - 1, j] < blen):
                best, blen = acc[i - 1, j], plen[i - 1, j]
            if acc[i, j - 1] < best or (acc[i, j - 1] == best and plen[i, j - 1] < blen):
                best, blen = acc[i, j - 1], plen[i, j - 1]
            acc[i, j] = best + cost[i, j]
            plen[i, j] = blen + 1
    return float(acc[n - 1, m - 1]), int(plen[n - 1, m - 1])


def autocorr_curve(frame, lag_min, lag_max):
    frame = np.asarray(frame, dtype=np.float64)
    n = len(frame)
    out = np.full(lag_max - lag_min + 1, -2.0)
    for lag in range(lag_min, lag_max + 1):
        a, b = frame[: n - lag], frame[lag:]
        e0 = float(a @ a)
        e1 = float(b @ b)
        if e0 > 0.0 and e1 > 0.0:
            out[lag - lag_min] = float(a @ b) / np.sqrt(e0 * e1)
    return out
