"""Pure-Python reference kernels.

Every routine here mirrors ``_core.pyx`` operation for operation, so the two
backends return bit-identical floats. Keep the loop orders in sync when
editing either file.
"""
from __future__ import annotations

import itertools
import math


def surrogate_sum(scores, order) -> float:
    """Return sum_k k * scores[order[k]] accumulated in decode order."""
    total = 0.0
    for k, pos in enumerate(order):
        total += k * scores[pos]
    return total


def min_surrogate_sum(scores):
    """Exhaustive minimum of :func:`surrogate_sum` over all orders.

    Orders are visited lexicographically; the first minimiser wins ties.
    """
    n = len(scores)
    best_order = None
    best = math.inf
    for order in itertools.permutations(range(n)):
        total = 0.0
        for k, pos in enumerate(order):
            total += k * scores[pos]
        if total < best:
            best = total
            best_order = order
    return tuple(best_order), best


def top_eigen_gram(w, x0, rtol: float, max_iter: int) -> float:
    """Largest eigenvalue of W^T W by power iteration from ``x0``."""
    rows = len(w)
    cols = len(w[0])
    gram = [[0.0] * cols for _ in range(cols)]
    for a in range(cols):
        for b in range(cols):
            acc = 0.0
            for r in range(rows):
                acc += w[r][a] * w[r][b]
            gram[a][b] = acc

    norm = 0.0
    for a in range(cols):
        norm += x0[a] * x0[a]
    norm = math.sqrt(norm)
    x = [x0[a] / norm for a in range(cols)]
    y = [0.0] * cols

    lam = 0.0
    lam_prev = 0.0
    for it in range(max_iter):
        for a in range(cols):
            acc = 0.0
            for b in range(cols):
                acc += gram[a][b] * x[b]
            y[a] = acc
        lam = 0.0
        ny = 0.0
        for a in range(cols):
            lam += x[a] * y[a]
            ny += y[a] * y[a]
        ny = math.sqrt(ny)
        if ny == 0.0:
            return 0.0
        for a in range(cols):
            x[a] = y[a] / ny
        if it > 0 and abs(lam - lam_prev) <= rtol * abs(lam):
            break
        lam_prev = lam
    return lam
