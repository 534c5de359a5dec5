"""Exact dynamic time warping: distance, optimal path, and medoid selection.

The local cost between two samples is the squared difference and the
alignment may insert, delete, or match with no global window, so the
distance is the minimum cumulative squared cost over all monotone,
continuous warping paths. The dynamic program adds each cell's local cost
after taking the minimum over predecessors, which makes the cumulative value
bit-identical to summing costs along the optimal path from its start.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

__all__ = [
    "dtw_distance",
    "dtw_path",
    "medoid",
    "pairwise_dtw_matrix",
]


def _as_value_list(series, arg_name: str) -> list[float]:
    values = [float(v) for v in np.asarray(series, dtype=np.float64).ravel()]
    if not values:
        raise ValueError(f"dtw: series {arg_name!r} is empty")
    return values


def dtw_distance(a, b) -> float:
    """Minimum cumulative squared-difference cost over all warping paths.

    Symmetric, non-negative, and zero for identical inputs. Uses a rolling
    one-row buffer, O(len(a) * len(b)) time and O(len(b)) memory.
    """
    x = _as_value_list(a, "a")
    y = _as_value_list(b, "b")
    m = len(y)

    d = x[0] - y[0]
    row = [d * d]
    for j in range(1, m):
        d = x[0] - y[j]
        row.append(row[j - 1] + d * d)

    for xv in x[1:]:
        diag = row[0]
        d = xv - y[0]
        row[0] = row[0] + d * d
        for j in range(1, m):
            up = row[j]
            best = diag
            if up < best:
                best = up
            left = row[j - 1]
            if left < best:
                best = left
            d = xv - y[j]
            row[j] = d * d + best
            diag = up
    return row[m - 1]


def dtw_path(a, b) -> tuple[float, list[tuple[int, int]]]:
    """Distance plus one optimal warping path as 1-based index pairs.

    The path starts at (1, 1), ends at (len(a), len(b)), and each step
    increments i, j, or both by one. Backtracking ties are broken by
    preferring the diagonal step, then the step decreasing i, then the step
    decreasing j, so the returned path is deterministic. The returned cost
    is bit-identical to dtw_distance on the same pair.
    """
    x = _as_value_list(a, "a")
    y = _as_value_list(b, "b")
    n, m = len(x), len(y)

    table = [[0.0] * m for _ in range(n)]
    r0 = table[0]
    d = x[0] - y[0]
    r0[0] = d * d
    for j in range(1, m):
        d = x[0] - y[j]
        r0[j] = r0[j - 1] + d * d
    for i in range(1, n):
        ri = table[i]
        rp = table[i - 1]
        d = x[i] - y[0]
        ri[0] = rp[0] + d * d
        for j in range(1, m):
            best = rp[j - 1]
            if rp[j] < best:
                best = rp[j]
            if ri[j - 1] < best:
                best = ri[j - 1]
            d = x[i] - y[j]
            ri[j] = d * d + best

    i, j = n - 1, m - 1
    path = [(n, m)]
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = table[i - 1][j - 1]
            up = table[i - 1][j]
            left = table[i][j - 1]
            best = min(diag, up, left)
            if diag == best:
                i -= 1
                j -= 1
            elif up == best:
                i -= 1
            else:
                j -= 1
        path.append((i + 1, j + 1))
    path.reverse()
    return table[n - 1][m - 1], path


def pairwise_dtw_matrix(series, workers: int = 1) -> np.ndarray:
    """Symmetric matrix of DTW distances between all members of a collection.

    Distinct pairs are independent, so with workers > 1 they are computed on
    a thread pool; results are assembled by pair index, so the matrix does
    not depend on the schedule.
    """
    items = list(series)
    n = len(items)
    if n == 0:
        raise ValueError("pairwise_dtw_matrix: empty collection")
    out = np.zeros((n, n))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if workers > 1 and pairs:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            dists = list(
                pool.map(lambda ij: dtw_distance(items[ij[0]], items[ij[1]]), pairs)
            )
    else:
        dists = [dtw_distance(items[i], items[j]) for i, j in pairs]
    for (i, j), value in zip(pairs, dists):
        out[i, j] = value
        out[j, i] = value
    return out


def medoid(series, workers: int = 1) -> int:
    """Index of the member minimizing the sum of DTW distances to the others.

    Ties are broken by the lowest index.
    """
    items = list(series)
    if not items:
        raise ValueError("medoid: empty collection")
    if len(items) == 1:
        return 0
    sums = pairwise_dtw_matrix(items, workers=workers).sum(axis=1)
    return int(np.argmin(sums))
