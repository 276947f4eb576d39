"""Continuum, hypercubic-lattice and piecewise-linear propagators."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .core import ConvergenceError, ModelParams, ParameterError, as_point


class Method(str, enum.Enum):
    PROPER_TIME_QUADRATURE = "proper_time_quadrature"
    FOURIER_QUADRATURE = "fourier_quadrature"
    TRANSFER_MATRIX = "transfer_matrix"
    SERIES_SUM = "series_sum"


@dataclass(frozen=True)
class PropagatorResult:
    value: float
    error: float
    method: Method

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ConvergenceError(f"non-finite propagator value from {self.method.value}")
        if self.error < 0:
            raise ValueError("error estimate must be non-negative")

    def __float__(self):
        return float(self.value)


def heat_kernel(p: ModelParams, t: float, r: float) -> float:
    """``(2 pi t)^(-d/2) exp(-r^2 / 2t)``."""
    if not t > 0:
        raise ParameterError("heat kernel needs t > 0")
    return float((2 * math.pi * t) ** (-p.d / 2) * math.exp(-(r * r) / (2 * t)))


def _proper_time_integrand(d: int, m: float, r: float):
    def f(T):
        if T <= 0:
            return 0.0
        return (2 * math.pi * T) ** (-d / 2) * math.exp(-(r * r) / (2 * T) - 0.5 * m * m * T)
    return f


def continuum_G(p: ModelParams, r: float, rtol: float = 1e-8) -> PropagatorResult:
    """Continuum propagator at separation ``r`` from the proper-time integral."""
    r = float(r)
    if r < 0:
        raise ParameterError("separation must be non-negative")
    if r == 0 and p.d >= 2:
        raise ParameterError("short-distance singularity: G diverges at r = 0 for d >= 2")
    f = _proper_time_integrand(p.d, p.m, r)
    # the integrand peaks near T = r/m; split there so both pieces are smooth
    split = max(r / p.m, 1e-300) if r > 0 else 1.0 / p.m**2
    tol = rtol / 4
    v1, e1 = integrate.quad(f, 0.0, split, epsabs=0.0, epsrel=tol, limit=200)
    v2, e2 = integrate.quad(f, split, np.inf, epsabs=0.0, epsrel=tol, limit=200)
    value = v1 + v2
    err = e1 + e2
    if err > rtol * abs(value):
        raise ConvergenceError(f"proper-time quadrature error {err:.3g} exceeds tolerance")
    return PropagatorResult(value, err, Method.PROPER_TIME_QUADRATURE)


def lattice_mass(p: ModelParams) -> float:
    """Solution of ``exp(a m(a)) = 2d + m^2 a^2``."""
    return math.log(2 * p.d + p.m**2 * p.a**2) / p.a


def lattice_G_hat(p: ModelParams, k) -> np.ndarray | float:
    """Momentum-space lattice propagator; zero outside the Brillouin zone."""
    kk = np.asarray(k, dtype=float)
    if p.d == 1 and (kk.ndim == 0 or kk.shape[-1] != 1):
        kk = kk[..., None]
    if kk.shape[-1] != p.d:
        raise ParameterError(f"momentum must have {p.d} components")
    a = p.a
    inside = np.all(np.abs(kk) <= math.pi / a, axis=-1)
    lap = 2.0 / a**2 * np.sum(1.0 - np.cos(a * kk), axis=-1)
    val = (2 * p.d + p.m**2 * a**2) / (p.m**2 + lap)
    out = np.where(inside, val, 0.0)
    return float(out) if out.ndim == 0 else out


def _on_lattice(x: np.ndarray, a: float, tol: float = 1e-9):
    u = x / a
    n = np.rint(u)
    return bool(np.all(np.abs(u - n) <= tol * np.maximum(1.0, np.abs(u)))), n.astype(np.int64)


def _trapezoid_G(p: ModelParams, x: np.ndarray, n: int) -> float:
    # periodic trapezoid rule over the zone; exact up to aliasing of period n*a
    a = p.a
    k1 = -math.pi / a + (2 * math.pi / a) * np.arange(n) / n
    cos1 = 1.0 - np.cos(a * k1)
    lap = np.zeros([n] * p.d)
    phase = np.zeros([n] * p.d)
    for j in range(p.d):
        shape = [1] * p.d
        shape[j] = n
        lap = lap + cos1.reshape(shape)
        phase = phase + (k1 * x[j]).reshape(shape)
    ghat = (2 * p.d + p.m**2 * a**2) / (p.m**2 + 2.0 / a**2 * lap)
    return float(np.sum(ghat * np.cos(phase)) / (a * n) ** p.d)


def _gauss_G(p: ModelParams, x: np.ndarray, panels: int, order: int = 16) -> float:
    a = p.a
    t, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(-math.pi / a, math.pi / a, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    k1 = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    w1 = (half[:, None] * w[None, :]).ravel()
    n = k1.size
    lap = np.zeros([n] * p.d)
    phase = np.zeros([n] * p.d)
    weight = np.ones([n] * p.d)
    for j in range(p.d):
        shape = [1] * p.d
        shape[j] = n
        lap = lap + (1.0 - np.cos(a * k1)).reshape(shape)
        phase = phase + (k1 * x[j]).reshape(shape)
        weight = weight * w1.reshape(shape)
    ghat = (2 * p.d + p.m**2 * a**2) / (p.m**2 + 2.0 / a**2 * lap)
    return float(np.sum(weight * ghat * np.cos(phase)) / (2 * math.pi) ** p.d)


def lattice_G_position(p: ModelParams, x, tol: float = 1e-10,
                       max_nodes: int = 4_000_000) -> PropagatorResult:
    """Position-space lattice propagator by Fourier inversion over the zone.

    Lattice points use the periodic trapezoid rule, whose only error is
    aliasing from images a period ``n a`` away; other points use composite
    Gauss-Legendre panels.  The error is estimated from two resolutions.
    """
    x = as_point(x, p.d)
    lattice, _ = _on_lattice(x, p.a)
    ext = float(np.sum(np.abs(x)))
    if lattice:
        n = int(math.ceil((ext + math.log(1.0 / tol) / p.m + 4 * p.a) / p.a))
        n += n % 2
        n2 = int(math.ceil(1.25 * n))
        if n2**p.d > max_nodes:
            raise ConvergenceError("requested accuracy needs more quadrature nodes than allowed")
        coarse = _trapezoid_G(p, x, n)
        fine = _trapezoid_G(p, x, n2)
    else:
        h = 0.5 * min(p.m, math.pi / max(float(np.max(np.abs(x))), 1e-12))
        panels = int(math.ceil(2 * math.pi / p.a / h))
        if (2 * panels * 16) ** p.d > max_nodes:
            raise ConvergenceError("requested accuracy needs more quadrature nodes than allowed")
        coarse = _gauss_G(p, x, panels)
        fine = _gauss_G(p, x, 2 * panels)
    err = abs(fine - coarse)
    if err > max(tol, tol * abs(fine)) * 1e3:
        raise ConvergenceError(f"Fourier quadrature error {err:.3g} above tolerance")
    return PropagatorResult(fine, err, Method.FOURIER_QUADRATURE)


def lattice_G_walksum(p: ModelParams, x, tol: float = 1e-12,
                      n_max: int | None = None) -> PropagatorResult:
    """Lattice propagator as a sum over walks, via convolution powers of the
    one-step kernel, truncated with a geometric tail bound.

    Uses the crude count ``#walks <= (2d)^N`` so that the neglected tail is at
    most ``a^(2-d) r^(N+1) / (1 - r)`` with ``r = 2d / (2d + m^2 a^2)``.
    """
    x = as_point(x, p.d)
    lattice, site = _on_lattice(x, p.a)
    if not lattice:
        raise ParameterError("the walk sum needs x on the lattice a Z^d")
    d, a = p.d, p.a
    r = 2 * d / (2 * d + p.m**2 * a**2)
    pref = a ** (2 - d)
    if n_max is None:
        n_max = int(math.ceil(math.log(tol * (1 - r) / pref) / math.log(r)))
    tail = pref * r ** (n_max + 1) / (1 - r)
    l1 = int(np.sum(np.abs(site)))
    R = max((n_max + l1) // 2 + 1, l1 + 1)
    if (2 * R + 1) ** d > 5_000_000:
        raise ConvergenceError("walk-sum grid too large; raise tol or use the Fourier route")
    grid = np.zeros([2 * R + 1] * d)
    origin = tuple([R] * d)
    target = tuple(int(R + s) for s in site)
    grid[origin] = 1.0
    total = 0.0
    weight = 1.0
    for N in range(n_max + 1):
        if (N - l1) % 2 == 0 and N >= l1:
            total += weight * grid[target]
        nxt = np.zeros_like(grid)
        for j in range(d):
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[j] = slice(0, -1)
            hi[j] = slice(1, None)
            nxt[tuple(hi)] += grid[tuple(lo)]
            nxt[tuple(lo)] += grid[tuple(hi)]
        grid = nxt / (2 * d)
        weight *= r
    return PropagatorResult(float(pref * total), tail, Method.TRANSFER_MATRIX)


def pl_H_term(p: ModelParams, r: float, N) -> np.ndarray | float:
    """Single term ``a^2 (2 pi a^2 N)^(-d/2) exp(-r^2/(2 a^2 N) - m^2 a^2 N / 2)``."""
    N = np.asarray(N, dtype=float)
    a2 = p.a**2
    out = a2 * (2 * math.pi * a2 * N) ** (-p.d / 2) * np.exp(-(r * r) / (2 * a2 * N) - 0.5 * p.m**2 * a2 * N)
    return float(out) if out.ndim == 0 else out


def pl_H_tail_bound(p: ModelParams, n_max: int) -> float:
    a2 = p.a**2
    q = p.q_pl
    return a2 * (2 * math.pi * a2 * (n_max + 1)) ** (-p.d / 2) * q ** (n_max + 1) / (1 - q)


def pl_H(p: ModelParams, r: float, n_max: int | None = None, tol: float = 1e-12) -> PropagatorResult:
    """Piecewise-linear propagator: the proper-time integral as a Riemann sum
    with step ``a^2``, plus a rigorous bound on the neglected tail."""
    if not r > 0:
        raise ParameterError("pl_H needs r > 0")
    if n_max is None:
        rate = 0.5 * p.m**2 * p.a**2
        n_max = int(math.ceil(-math.log(tol) / rate)) + 1
    N = np.arange(1, n_max + 1)
    value = float(np.sum(pl_H_term(p, r, N)))
    tail = pl_H_tail_bound(p, n_max)
    if tail > max(tol, tol * abs(value)) * 10:
        raise ConvergenceError(f"tail bound {tail:.3g} at N_max={n_max} exceeds tolerance")
    return PropagatorResult(value, tail, Method.SERIES_SUM)
