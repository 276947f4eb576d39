"""Compiled inner loops for lattice bridges in d <= 2.

In d = 2 the four unit steps map one-to-one onto pairs of independent +-1
moves in the rotated coordinates ``u = x + y`` and ``v = x - y``, so a uniform
bridge is a pair of independent one-dimensional bridges.  A one-dimensional
bridge with ``n`` steps left and ``k`` still to travel steps up with
probability ``(n + k) / (2n)``.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def log_count_1d(n, k):
    if k < 0:
        k = -k
    if n < k or (n - k) % 2 != 0:
        return -np.inf
    return math.lgamma(n + 1.0) - math.lgamma((n + k) // 2 + 1.0) - math.lgamma((n - k) // 2 + 1.0)


@njit(cache=True, nogil=True)
def log_count(N, d, k0, k1):
    if d == 1:
        return log_count_1d(N, k0)
    return log_count_1d(N, k0 + k1) + log_count_1d(N, k0 - k1)


@njit(cache=True, nogil=True)
def geometric(rng, log_q):
    u = rng.random()
    return int(math.floor(math.log1p(-u) / log_q))


@njit(cache=True, nogil=True)
def _bridge_move(rng, d, n, ru, rv):
    """Draw one step; returns (axis, sign, du, dv)."""
    du = 1 if rng.random() * (2 * n) < n + ru else -1
    if d == 1:
        return 0, du, du, 0
    dv = 1 if rng.random() * (2 * n) < n + rv else -1
    if du == dv:
        return 0, du, du, dv
    return 1, du, du, dv


@njit(cache=True, nogil=True)
def sample_bridge_steps(rng, N, d, k0, k1):
    """Uniform N-step walk from 0 to (k0, k1); returns signed axis codes."""
    out = np.empty(N, dtype=np.int64)
    if d == 1:
        ru, rv = k0, 0
    else:
        ru, rv = k0 + k1, k0 - k1
    for i in range(N):
        n = N - i
        axis, sign, du, dv = _bridge_move(rng, d, n, ru, rv)
        ru -= du
        rv -= dv
        out[i] = sign * (axis + 1)
    return out


@njit(cache=True, nogil=True)
def advance(p, q, axis, phase, lo, hi, closed):
    """Follow the axis-parallel segment p -> q through the region chain.

    Returns the phase (index of the region currently being traversed) at q, or
    -1 when the path cannot belong to the cylinder set any more.
    """
    nreg = lo.shape[0]
    d = p.shape[0]
    qa = q[axis]
    while True:
        l = lo[phase, axis]
        h = hi[phase, axis]
        if closed:
            up = qa > h
            down = qa < l
        else:
            up = qa >= h
            down = qa <= l
        if not (up or down):
            return phase
        if phase == nreg - 1:
            return -1
        bound = h if up else l
        nxt = phase + 1
        for j in range(d):
            c = bound if j == axis else p[j]
            if closed:
                if c < lo[nxt, j] or c > hi[nxt, j]:
                    return -1
            else:
                if c <= lo[nxt, j] or c >= hi[nxt, j]:
                    return -1
        phase = nxt


@njit(cache=True, nogil=True)
def chain_member(int_vertices, lo, hi, closed):
    """Membership of a lattice path (vertices in lattice units) in the chain."""
    n = int_vertices.shape[0] - 1
    d = int_vertices.shape[1]
    p = np.empty(d)
    q = np.empty(d)
    for j in range(d):
        p[j] = int_vertices[0, j]
    phase = 0
    for i in range(n):
        axis = 0
        for j in range(d):
            q[j] = int_vertices[i + 1, j]
            if int_vertices[i + 1, j] != int_vertices[i, j]:
                axis = j
        phase = advance(p, q, axis, phase, lo, hi, closed)
        if phase < 0:
            return False
        for j in range(d):
            p[j] = q[j]
    return phase == lo.shape[0] - 1


@njit(cache=True, nogil=True)
def bridge_chain_kernel(rng, n_samples, log_q, log_pref, d, k0, k1, lo, hi, closed):
    """Monte Carlo over (N, uniform bridge, chain membership).

    Each draw takes N from the geometric law with ratio q, weights a reachable
    bridge by ``exp(log_pref) (2d)^-N #walks(N)`` and scores the weight when
    the path stays in the cylinder set.  Non-members stop as soon as they
    leave the chain.  Returns (sum w 1, sum (w 1)^2, #members, #reachable).
    """
    s1 = 0.0
    s2 = 0.0
    members = 0
    reach = 0
    log2d = math.log(2.0 * d)
    if d == 1:
        U, V = k0, 0
    else:
        U, V = k0 + k1, k0 - k1
    p = np.zeros(d)
    q = np.zeros(d)
    last = lo.shape[0] - 1
    for _ in range(n_samples):
        N = geometric(rng, log_q)
        lc = log_count(N, d, k0, k1)
        if lc == -np.inf:
            continue
        reach += 1
        w = math.exp(log_pref - N * log2d + lc)
        for j in range(d):
            p[j] = 0.0
        ru = U
        rv = V
        phase = 0
        for i in range(N):
            n = N - i
            axis, sign, du, dv = _bridge_move(rng, d, n, ru, rv)
            ru -= du
            rv -= dv
            for j in range(d):
                q[j] = p[j]
            q[axis] += sign
            phase = advance(p, q, axis, phase, lo, hi, closed)
            if phase < 0:
                break
            p[axis] = q[axis]
        if phase == last:
            s1 += w
            s2 += w * w
            members += 1
    return s1, s2, members, reach
