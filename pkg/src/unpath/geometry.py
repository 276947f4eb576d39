"""Cylinder sets of unparametrised paths.

A path belongs to the cylinder set of the chain ``A_1, ..., A_n`` when it
leaves ``A_1`` at a point of ``A_2``, then leaves ``A_2`` at a point of
``A_3``, and so on, and finally stays in ``A_n`` until its end.  The escape
times are computed exactly for polylines: boxes by clipping each segment
against the faces, balls by solving the quadratic for the boundary crossing.

Membership is evaluated under two semantics.  *Open* treats the regions as
open sets, so touching a boundary is an exit.  *Closed* uses the closures, so
a path may run along a boundary and come back.  A path that is a member only
under the closed reading is reported as ``boundary_suspect``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from pathlib import Path as FilePath
from typing import Optional, Sequence, Union

import numpy as np
import tomli

from . import _kernels
from .core import (Ball, Box, EmptyEnsembleError, LatticePath, ParameterError, PLPath, Region,
                   as_point, run_chunks)
from .sampler import (EnsembleKind, EnsembleSpec, MCEstimate, lat_bridge_log_weight,
                      lat_bridge_steps, sample_step_count)
from .walks import reachable


class Verdict(str, enum.Enum):
    MEMBER = "member"
    BOUNDARY_SUSPECT = "boundary_suspect"
    NON_MEMBER = "non_member"


@dataclass(frozen=True, eq=False)
class CylinderSet:
    regions: tuple
    x: np.ndarray
    y: np.ndarray
    star: Optional[tuple] = field(default=None, init=False)

    def __post_init__(self):
        regions = tuple(self.regions)
        if not regions:
            raise ParameterError("a cylinder set needs at least one region")
        d = regions[0].d
        if any(r.d != d for r in regions):
            raise ParameterError("all regions must share one dimension")
        x = as_point(self.x, d)
        y = as_point(self.y, d)
        if not regions[0].contains(x):
            raise ParameterError("x must lie in the first region")
        if not regions[-1].contains(y):
            raise ParameterError("y must lie in the last region")
        object.__setattr__(self, "regions", regions)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        try:
            star = tuple(check_star_condition(self))
        except ParameterError:
            star = None
        object.__setattr__(self, "star", star)

    @property
    def n(self) -> int:
        return len(self.regions)

    @property
    def d(self) -> int:
        return self.x.shape[0]

    @property
    def valid(self) -> Optional[bool]:
        return None if self.star is None else all(self.star)

    @property
    def boxes_only(self) -> bool:
        return all(isinstance(r, Box) for r in self.regions)


@dataclass(frozen=True)
class EscapeTrace:
    times: tuple
    exit_points: tuple
    verdict: Verdict
    closed_times: tuple = ()

    @property
    def member(self) -> bool:
        return self.verdict is Verdict.MEMBER

    def in_closure(self) -> bool:
        return self.verdict is not Verdict.NON_MEMBER


# ---------------------------------------------------------------------------
# escape times


def _frame(path, cyl: CylinderSet):
    """Vertices and regions in a common frame; lattice paths use lattice units
    so that boundary contacts are decided in exact integer arithmetic."""
    if isinstance(path, LatticePath):
        a = path.spacing
        regions = [_snap_region(r.translated(path.anchor, a)) for r in cyl.regions]
        return path.integer_vertices().astype(float), regions
    return np.asarray(path.vertices, dtype=float), list(cyl.regions)


def _snap_region(r: Region) -> Region:
    if isinstance(r, Box):
        return Box(_snap(r.lower), _snap(r.upper))
    return r


def _snap(v: np.ndarray) -> np.ndarray:
    near = np.rint(v)
    return np.where(np.abs(v - near) <= 1e-9 * np.maximum(1.0, np.abs(v)), near, v)


def _trace(v: np.ndarray, regions: list, closed: bool):
    """Walk the chain; returns (escape times, exit points, member flag)."""
    n = len(regions)
    N = v.shape[0] - 1
    times, exits = [], []
    phase = 0
    ok = True
    for j in range(max(N, 0)):
        p, q = v[j], v[j + 1]
        u0 = 0.0
        while True:
            u = regions[phase].exit_parameter(p, q, u0, closed)
            if u is None:
                break
            e = p + u * (q - p)
            times.append(float((j + u) / N))
            exits.append(e)
            if phase == n - 1 or not regions[phase + 1].contains(e, closed=closed):
                ok = False
                break
            phase += 1
            u0 = u
        if not ok:
            break
    member = ok and phase == n - 1
    # sup over an empty set is 1: unreached escape times are reported as 1
    times += [1.0] * (n - len(times))
    if member and any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
        member = False
    return tuple(times[:n]), tuple(exits), member


def escape_times(path, cyl: CylinderSet, check_endpoints: bool = True) -> EscapeTrace:
    """Escape times, exit points and membership verdict of a polyline."""
    if path.d != cyl.d:
        raise ParameterError("path and cylinder dimensions differ")
    if check_endpoints:
        v = path.vertices
        if not (np.allclose(v[0], cyl.x, atol=1e-9) and np.allclose(v[-1], cyl.y, atol=1e-9)):
            raise ParameterError("path endpoints do not match the cylinder endpoints")
    v, regions = _frame(path, cyl)
    if isinstance(path, LatticePath):
        if not regions[0].contains(v[0]):
            return EscapeTrace((1.0,) * cyl.n, (), Verdict.NON_MEMBER)
    times, exits, member = _trace(v, regions, closed=False)
    ctimes, _, cmember = _trace(v, regions, closed=True)
    if isinstance(path, LatticePath):
        exits = tuple(path.anchor + path.spacing * e for e in exits)
    if member:
        verdict = Verdict.MEMBER
    elif cmember:
        verdict = Verdict.BOUNDARY_SUSPECT
    else:
        verdict = Verdict.NON_MEMBER
    return EscapeTrace(times, exits, verdict, ctimes)


def is_member(path, cyl: CylinderSet, semantics: str = "open") -> bool:
    tr = escape_times(path, cyl, check_endpoints=False)
    return tr.member if semantics == "open" else tr.in_closure()


# ---------------------------------------------------------------------------
# the (star) precondition


def _open_interval_meets_closed(L: float, H: float, lo: float, hi: float) -> bool:
    """Does the open interval (L, H) meet the closed interval [lo, hi]?"""
    return L < H and lo <= hi and max(L, lo) < H and L < hi


def _box_triple(A: Box, B: Box, C: Box) -> bool:
    """True when A and C (open) and the boundary of B have a common point."""
    d = A.d
    L = np.maximum(A.lower, C.lower)
    H = np.minimum(A.upper, C.upper)
    if np.any(L >= H):
        return False
    for axis in range(d):
        for coord in (B.lower[axis], B.upper[axis]):
            if not L[axis] < coord < H[axis]:
                continue
            if all(_open_interval_meets_closed(L[k], H[k], B.lower[k], B.upper[k])
                   for k in range(d) if k != axis):
                return True
    return False


def _cap(S: Ball, other: Ball):
    """The part of sphere ``S`` inside the open ball ``other`` as (axis, angle).

    Returns ``None`` for an empty cap and ``"all"`` for the whole sphere.
    """
    off = other.center - S.center
    dist = float(np.linalg.norm(off))
    r, r1 = S.radius, other.radius
    if dist == 0.0:
        return "all" if r < r1 else None
    c = (r * r + dist * dist - r1 * r1) / (2 * r * dist)
    if c >= 1.0:
        return None
    if c < -1.0:
        return "all"
    return off / dist, math.acos(c)


def _ball_triple(A: Ball, B: Ball, C: Ball) -> bool:
    if A.d == 1:
        pts = [B.center - B.radius, B.center + B.radius]
        return any(A.contains(p) and C.contains(p) for p in pts)
    ca, cc = _cap(B, A), _cap(B, C)
    if ca is None or cc is None:
        return False
    if isinstance(ca, str) or isinstance(cc, str):
        return True
    theta = math.acos(float(np.clip(ca[0] @ cc[0], -1.0, 1.0)))
    return theta < ca[1] + cc[1]


def check_star_condition(cyl: CylinderSet) -> list:
    """For each interior index i, whether ``A_{i-1}``, ``A_{i+1}`` and the
    boundary of ``A_i`` have no common point.  Vacuous for n < 3."""
    out = []
    R = cyl.regions
    for i in range(1, len(R) - 1):
        A, B, C = R[i - 1], R[i], R[i + 1]
        if all(isinstance(r, Box) for r in (A, B, C)):
            out.append(not _box_triple(A, B, C))
        elif all(isinstance(r, Ball) for r in (A, B, C)):
            out.append(not _ball_triple(A, B, C))
        else:
            raise ParameterError("the triple-intersection check supports box/box or ball/ball chains only")
    return out


# ---------------------------------------------------------------------------
# tangency


def _segment_min(region: Region, p, q):
    from scipy.optimize import minimize_scalar
    f = lambda u: region.signed_distance(p + u * (q - p))
    res = minimize_scalar(f, bounds=(0.0, 1.0), method="bounded", options={"xatol": 1e-12})
    return float(res.x), float(res.fun)


def tangency_scan(path, region: Region, tol: Optional[float] = None) -> list:
    """Parameters where the path touches the boundary without crossing it.

    The signed distance is convex along each segment, so it is sampled at the
    vertices and at each segment's minimiser.  Each run of samples within
    ``tol`` of the boundary is a contact; a contact whose neighbouring samples
    lie on the same side is reported (at its closest sample).  Contacts at
    the path's ends are ignored.  The default tolerance only absorbs
    rounding, so only genuine contacts are reported.
    """
    if tol is None:
        scale = max(1.0, float(np.max(np.abs(path.vertices))))
        tol = 1e-9 * scale
    if not tol > 0:
        raise ParameterError("tol must be positive")
    v = np.asarray(path.vertices, dtype=float)
    N = v.shape[0] - 1
    if N == 0:
        return []
    samples = [(0.0, region.signed_distance(v[0]))]
    for j in range(N):
        u, fmin = _segment_min(region, v[j], v[j + 1])
        if 1e-12 < u < 1 - 1e-12:
            samples.append(((j + u) / N, fmin))
        samples.append(((j + 1) / N, region.signed_distance(v[j + 1])))
    out = []
    i = 0
    while i < len(samples):
        if abs(samples[i][1]) > tol:
            i += 1
            continue
        start = i
        while i < len(samples) and abs(samples[i][1]) <= tol:
            i += 1
        end = i
        if start == 0 or end == len(samples):
            continue
        before, after = samples[start - 1][1], samples[end][1]
        if (before > 0) == (after > 0):
            run = samples[start:end]
            out.append(min(run, key=lambda s: abs(s[1]))[0])
    return out


# ---------------------------------------------------------------------------
# ball covers


def rational_snap(x: np.ndarray, radius: float) -> tuple:
    """Point with rational coordinates of smallest common denominator within
    Euclidean distance ``radius`` of ``x`` (strictly)."""
    x = as_point(x)
    per = radius / math.sqrt(x.shape[0])
    q = 1
    while True:
        num = np.rint(x * q)
        if np.all(np.abs(num / q - x) < per):
            return tuple(Fraction(int(n), q) for n in num)
        q += 1


def build_cover(path: PLPath, eps: float) -> CylinderSet:
    """Chain of radius-eps balls containing ``path`` as a member.

    The first ball is centred at the start point.  Each time the path leaves
    the current ball, the next ball is centred at a rational point within
    eps/3 of the exit point.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    if isinstance(path, LatticePath):
        path = PLPath(path.spacing**2 * path.N, path.vertices)
    v = np.asarray(path.vertices, dtype=float)
    N = v.shape[0] - 1
    balls = [Ball(v[0], eps)]
    centers = [None]
    for j in range(N):
        p, q = v[j], v[j + 1]
        u0 = 0.0
        while True:
            u = balls[-1].exit_parameter(p, q, u0, closed=False)
            if u is None:
                break
            e = p + u * (q - p)
            c = rational_snap(e, eps / 3)
            centers.append(c)
            balls.append(Ball(np.array([float(f) for f in c]), eps))
            u0 = u
    cyl = CylinderSet(tuple(balls), v[0], v[-1])
    object.__setattr__(cyl, "rational_centers", tuple(centers))
    if not escape_times(path, cyl).member:
        raise AssertionError("cover construction failed to contain its path")
    return cyl


def aligned_uniform_distance(p1, p2, cyl: CylinderSet) -> float:
    """Uniform distance after matching the escape times of the two paths.

    Phase i of each path is mapped linearly onto [i-1, i]; both maps are
    piecewise linear, so the supremum is attained at a breakpoint.
    """
    t1 = escape_times(p1, cyl, check_endpoints=False)
    t2 = escape_times(p2, cyl, check_endpoints=False)
    if not (t1.in_closure() and t2.in_closure()):
        raise ParameterError("both paths must belong to the cylinder set")
    tau1 = np.concatenate(([0.0], t1.times))
    tau2 = np.concatenate(([0.0], t2.times))

    def to_common(tau, t):
        i = min(max(int(np.searchsorted(tau, t, side="right")) - 1, 0), len(tau) - 2)
        w = tau[i + 1] - tau[i]
        return i + ((t - tau[i]) / w if w > 0 else 0.0)

    def from_common(tau, s):
        i = min(int(math.floor(s)), len(tau) - 2)
        return float(tau[i] + (s - i) * (tau[i + 1] - tau[i]))

    from .core import pl_eval
    grid = set(range(cyl.n + 1))
    for path, tau in ((p1, tau1), (p2, tau2)):
        N = path.N
        grid.update(to_common(tau, j / N) for j in range(N + 1))
    best = 0.0
    for s in sorted(grid):
        a = pl_eval(p1, min(max(from_common(tau1, s), 0.0), 1.0))
        b = pl_eval(p2, min(max(from_common(tau2, s), 0.0), 1.0))
        best = max(best, float(np.linalg.norm(a - b)))
    return best


# ---------------------------------------------------------------------------
# Monte Carlo measure


@dataclass(frozen=True)
class CylinderEstimate:
    """``estimate`` is in continuum units: (2/m^2) times the raw ensemble mass."""

    estimate: float
    stderr: float
    raw: MCEstimate
    members: int
    semantics: str


def _box_arrays(cyl: CylinderSet, x: np.ndarray, a: float):
    lo = np.array([_snap((r.lower - x) / a) for r in cyl.regions])
    hi = np.array([_snap((r.upper - x) / a) for r in cyl.regions])
    return np.ascontiguousarray(lo), np.ascontiguousarray(hi)


def mc_cylinder_measure(spec: EnsembleSpec, cyl: CylinderSet, semantics: str = "open") -> CylinderEstimate:
    """Weighted Monte Carlo estimate of the cylinder measure from lattice bridges.

    Draws N from the geometric law, a uniform N-step bridge from x to y, and
    scores its weight when the bridge belongs to the cylinder set.  ``open``
    counts only members; ``closed`` also counts paths that touch a boundary
    and come back.
    """
    if spec.kind is not EnsembleKind.LAT_BRIDGE:
        raise ParameterError("cylinder measures are estimated from lat_bridge ensembles")
    if semantics not in ("open", "closed"):
        raise ParameterError("semantics must be 'open' or 'closed'")
    if not (np.allclose(spec.x, cyl.x) and np.allclose(spec.y, cyl.y)):
        raise ParameterError("ensemble and cylinder endpoints differ")
    p = spec.params
    k = spec.offset
    closed = semantics == "closed"
    log_q = math.log(spec.q)
    log_pref = -p.d * math.log(p.a)

    if cyl.boxes_only and p.d <= 2:
        lo, hi = _box_arrays(cyl, spec.x, p.a)
        k0 = int(k[0])
        k1 = int(k[1]) if p.d == 2 else 0

        def chunk(stream, size):
            s1, s2, mem, _ = _kernels.bridge_chain_kernel(stream.rng, size, log_q, log_pref, p.d,
                                                          k0, k1, lo, hi, closed)
            return s1, s2, size, mem
    else:
        def chunk(stream, size):
            rng = stream.rng
            Ns = sample_step_count(spec.kind, p, stream, size=size)
            s1 = s2 = 0.0
            mem = 0
            for N in Ns:
                N = int(N)
                if N < 1 or not reachable(N, k):
                    continue
                path = LatticePath(spec.x, lat_bridge_steps(p.d, N, k, rng), p.a)
                if is_member(path, cyl, semantics):
                    w = math.exp(lat_bridge_log_weight(p, k, N))
                    s1 += w
                    s2 += w * w
                    mem += 1
            return s1, s2, size, mem

    parts = run_chunks(spec.stream, spec.n_samples, chunk)
    s1 = sum(t[0] for t in parts)
    s2 = sum(t[1] for t in parts)
    n = sum(t[2] for t in parts)
    mean = s1 / n
    se = math.sqrt(max(s2 / n - mean * mean, 0.0) / max(n - 1, 1))
    scale = 2.0 / p.m**2
    raw = MCEstimate(mean, se, n)
    return CylinderEstimate(scale * mean, scale * se, raw, sum(t[3] for t in parts), semantics)


# ---------------------------------------------------------------------------
# configuration


def _num(v) -> float:
    if isinstance(v, (Decimal, int, float)):
        return float(v)
    raise ParameterError(f"expected a number, got {v!r}")


def _vec(v) -> np.ndarray:
    if isinstance(v, (list, tuple)):
        return np.array([_num(c) for c in v])
    return np.array([_num(v)])


def region_from_dict(spec: dict) -> Region:
    kind = spec.get("kind")
    if kind == "box":
        return Box(_vec(spec["lower"]), _vec(spec["upper"]))
    if kind == "ball":
        return Ball(_vec(spec["center"]), _num(spec["radius"]))
    raise ParameterError(f"unknown region kind {kind!r}")


def load_cylinder(src: Union[str, FilePath, dict]) -> CylinderSet:
    """Cylinder set from a TOML file, TOML text or an already-parsed mapping.

    Expected keys: ``x``, ``y`` and an array of ``regions`` tables, each with
    ``kind = "box"`` (``lower``, ``upper``) or ``kind = "ball"`` (``center``,
    ``radius``).  Decimal literals are parsed exactly before conversion.
    """
    if isinstance(src, dict):
        data = src
    else:
        text = src
        if isinstance(src, FilePath) or (isinstance(src, str) and "\n" not in src and FilePath(src).exists()):
            text = FilePath(src).read_text()
        try:
            data = tomli.loads(text, parse_float=Decimal)
        except tomli.TOMLDecodeError as exc:
            raise ParameterError(f"cylinder config: {exc}") from None
    if "cylinder" in data and "regions" not in data:
        data = data["cylinder"]
    try:
        regions = tuple(region_from_dict(r) for r in data["regions"])
        return CylinderSet(regions, _vec(data["x"]), _vec(data["y"]))
    except KeyError as exc:
        raise ParameterError(f"cylinder config lacks field {exc.args[0]!r}") from None
