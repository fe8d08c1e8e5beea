"""Pure-Python span-grid kernels (fallback when the compiled module is absent).

The compiled twin in ``_ckernels.pyx`` implements the same loops and must
produce identical outputs; ``tests/test_kernels.py`` holds them to that.
"""

from __future__ import annotations

import numpy as np


def ring_members(i: int, j: int, d: int, T: int) -> list[tuple[int, int]]:
    """Valid spans at Manhattan distance exactly ``d`` from (i, j)."""
    out = []
    for i2 in range(i - d, i + d + 1):
        r = d - abs(i2 - i)
        for j2 in ((j - r, j + r) if r else (j,)):
            if 0 <= i2 <= j2 < T:
                out.append((i2, j2))
    return out


def smooth_fill(starts, ends, types, sizes, T: int, c: int, epsilon: float, nominal: bool) -> np.ndarray:
    probs = np.zeros((T, T, c), dtype=np.float64)
    for e in range(len(starts)):
        i, j, t, D = int(starts[e]), int(ends[e]), int(types[e]), int(sizes[e])
        probs[i, j, t] += 1.0 - epsilon
        if epsilon == 0.0:
            continue
        share = epsilon / D
        for d in range(1, D + 1):
            ring = ring_members(i, j, d, T)
            if nominal:
                each = share / (4 * d)
            elif ring:
                each = share / len(ring)
            else:
                probs[i, j, t] += share
                continue
            for i2, j2 in ring:
                probs[i2, j2, t] += each
    for i in range(T):
        for j in range(i, T):
            s = 0.0
            for t in range(1, c):
                s += probs[i, j, t]
            if s <= 1.0:
                probs[i, j, 0] = 1.0 - s
            else:
                for t in range(1, c):
                    probs[i, j, t] /= s
                probs[i, j, 0] = 0.0
    return probs


def candidates(probs: np.ndarray, valid: np.ndarray, min_conf: float):
    """Cells whose argmax is an entity type: (starts, ends, types, confidences)."""
    T, _, c = probs.shape
    P = np.asarray(probs, dtype=np.float64).tolist()
    V = np.asarray(valid).tolist()
    starts, ends, types, confs = [], [], [], []
    for i in range(T):
        for j in range(i, T):
            if not V[i][j]:
                continue
            cell = P[i][j]
            best, best_p = 0, cell[0]
            for t in range(1, c):
                if cell[t] > best_p:
                    best, best_p = t, cell[t]
            if best != 0 and best_p >= min_conf:
                starts.append(i)
                ends.append(j)
                types.append(best)
                confs.append(best_p)
    return (
        np.array(starts, dtype=np.int64),
        np.array(ends, dtype=np.int64),
        np.array(types, dtype=np.int64),
        np.array(confs, dtype=np.float64),
    )


def greedy(starts, ends, nested: bool) -> np.ndarray:
    """Accept candidates in the given order, skipping any that clash with an accepted one."""
    kept: list[int] = []
    for k in range(len(starts)):
        s, e = starts[k], ends[k]
        ok = True
        for m in kept:
            s2, e2 = starts[m], ends[m]
            if s <= e2 and s2 <= e:
                if not nested or not ((s <= s2 and e2 <= e) or (s2 <= s and e <= e2)):
                    ok = False
                    break
        if ok:
            kept.append(k)
    return np.array(kept, dtype=np.int64)
