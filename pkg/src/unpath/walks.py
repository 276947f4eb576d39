"""Counting nearest-neighbour walks on Z^d."""

from __future__ import annotations

from functools import lru_cache
from math import comb, lgamma, log

import numpy as np
from scipy.special import gammaln, logsumexp

NEG_INF = float("-inf")


def reachable(N: int, k) -> bool:
    """True when some N-step walk moves by the integer vector ``k``."""
    l1 = int(np.sum(np.abs(k)))
    return N >= l1 and (N - l1) % 2 == 0


def log_count_1d(n, k):
    """Log of the number of n-step +-1 walks with displacement k (vectorised)."""
    n = np.asarray(n)
    k = np.abs(np.asarray(k))
    ok = (n >= k) & ((n - k) % 2 == 0)
    up = (n + k) // 2
    down = (n - k) // 2
    with np.errstate(invalid="ignore"):
        val = gammaln(n + 1.0) - gammaln(up + 1.0) - gammaln(down + 1.0)
    return np.where(ok, val, NEG_INF)


def count_1d(n: int, k: int) -> int:
    k = abs(k)
    if n < k or (n - k) % 2:
        return 0
    return comb(n, (n + k) // 2)


def count(N: int, k) -> int:
    """Exact number of N-step walks on Z^d with displacement ``k``."""
    k = tuple(int(v) for v in np.atleast_1d(k))
    return _count(N, k)


@lru_cache(maxsize=4096)
def _count(N: int, k: tuple) -> int:
    if len(k) == 1:
        return count_1d(N, k[0])
    if len(k) == 2:
        # rotate: each 2-d step is a pair of independent +-1 moves in (x+y, x-y)
        return count_1d(N, k[0] + k[1]) * count_1d(N, k[0] - k[1])
    total = 0
    for n1 in range(abs(k[0]), N + 1, 2):
        c1 = count_1d(n1, k[0])
        if c1:
            total += comb(N, n1) * c1 * _count(N - n1, k[1:])
    return total


def log_count(N: int, k) -> float:
    """Log of :func:`count` computed in floating point, usable for large N."""
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    d = k.shape[0]
    if not reachable(N, k):
        return NEG_INF
    if d == 1:
        return float(log_count_1d(N, k[0]))
    if d == 2:
        return float(log_count_1d(N, k[0] + k[1]) + log_count_1d(N, k[0] - k[1]))
    n1 = np.arange(abs(k[0]), N + 1, 2)
    rest = np.array([log_count(int(N - n), k[1:]) for n in n1])
    terms = (gammaln(N + 1.0) - gammaln(n1 + 1.0) - gammaln(N - n1 + 1.0)
             + log_count_1d(n1, k[0]) + rest)
    return float(logsumexp(terms))


def log_walk_probability(N: int, k) -> float:
    """Log probability that a uniform N-step walk ends at displacement ``k``."""
    d = np.atleast_1d(k).shape[0]
    return log_count(N, k) - N * log(2 * d)


def log_allocation_weights(N: int, k) -> tuple[np.ndarray, np.ndarray]:
    """Log weights over the number of steps spent on the first axis.

    Returns ``(n1_values, log_weights)`` with weights proportional to the number
    of walks spending ``n1`` steps on axis 0.
    """
    k = np.atleast_1d(np.asarray(k, dtype=np.int64))
    n1 = np.arange(abs(k[0]), N + 1, 2)
    rest = np.array([log_count(int(N - n), k[1:]) for n in n1])
    lw = (lgamma(N + 1.0) - gammaln(n1 + 1.0) - gammaln(N - n1 + 1.0)
          + log_count_1d(n1, k[0]) + rest)
    return n1, lw
