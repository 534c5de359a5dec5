"""Barycenter averaging of a set of series under dynamic time warping.

The prototype is refined iteratively: every member is aligned to the current
prototype with an optimal warping path, each prototype coordinate collects
the member samples aligned to it, and the coordinate is replaced by their
arithmetic mean. The prototype keeps the medoid's length throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dtw import dtw_path, medoid

__all__ = ["DbaConfig", "dba_iteration", "dba_average"]


@dataclass(frozen=True)
class DbaConfig:
    """Number of refinement iterations applied after medoid initialization."""

    iterations: int = 10

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


def dba_iteration(prototype, members) -> np.ndarray:
    """One refinement step: align every member, then average per coordinate.

    Path continuity guarantees every prototype coordinate receives at least
    one sample. The mean is accumulated relative to the first sample aligned
    to each coordinate, so averaging identical samples reproduces them
    exactly and the step is deterministic (fixed tie-breaking in dtw_path,
    members visited in input order).
    """
    proto = np.asarray(prototype, dtype=np.float64)
    members = list(members)
    if not members:
        raise ValueError("dba_iteration: empty member set")
    length = len(proto)
    pivots = np.zeros(length)
    delta_sums = np.zeros(length)
    counts = np.zeros(length, dtype=np.int64)
    for member in members:
        mem = np.asarray(member, dtype=np.float64)
        _, path = dtw_path(proto, mem)
        for i, j in path:
            ii = i - 1
            v = mem[j - 1]
            if counts[ii] == 0:
                pivots[ii] = v
            delta_sums[ii] += v - pivots[ii]
            counts[ii] += 1
    return pivots + delta_sums / counts


def dba_average(members, config: DbaConfig = DbaConfig()) -> np.ndarray:
    """Average a non-empty set of series in the warping-induced space.

    Initializes the prototype to the set's medoid and applies exactly
    config.iterations refinement steps.
    """
    members = list(members)
    if not members:
        raise ValueError("dba_average: empty member set")
    proto = np.array(members[medoid(members)], dtype=np.float64)
    for _ in range(config.iterations):
        proto = dba_iteration(proto, members)
    proto.flags.writeable = False
    return proto
