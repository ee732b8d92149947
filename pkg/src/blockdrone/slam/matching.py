"""Descriptor matching: mutual nearest neighbor with ratio and distance gates."""

from __future__ import annotations

import numpy as np

from .features import FrameFeatures, hamming_matrix

MAX_HAMMING = 80
LOWE_RATIO = 0.8


def match_features(
    a: FrameFeatures,
    b: FrameFeatures,
    max_distance: int = MAX_HAMMING,
    ratio: float = LOWE_RATIO,
) -> np.ndarray:
    """Match descriptors of two frames; returns (M, 2) index pairs into (a, b).

    A pair survives only if it is the mutual nearest neighbor, its distance
    is under `max_distance`, and it beats the second-best candidate by the
    Lowe ratio.  Each index appears at most once per side.
    """
    if len(a) == 0 or len(b) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    dist = hamming_matrix(a.descriptors, b.descriptors)

    best_b = np.argmin(dist, axis=1)
    best_ab = dist[np.arange(len(a)), best_b]
    if dist.shape[1] >= 2:
        part = np.partition(dist, 1, axis=1)
        second = part[:, 1]
    else:
        second = np.full(len(a), np.iinfo(np.int64).max)
    best_a = np.argmin(dist, axis=0)

    pairs = []
    for i in range(len(a)):
        j = best_b[i]
        if best_a[j] != i:
            continue  # not mutual
        if best_ab[i] >= max_distance:
            continue
        if second[i] > 0 and best_ab[i] >= ratio * second[i]:
            continue
        pairs.append((i, j))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)
