"""Shared value types: model parameters, discrete paths, regions and random streams."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, TypeVar, Union

import numpy as np

T_ = TypeVar("T_")


class ParameterError(ValueError):
    """Raised when model parameters or path data violate their invariants."""


class EmptyEnsembleError(ValueError):
    """Raised when no discrete path satisfies the requested constraints."""


class ConvergenceError(RuntimeError):
    """Raised when a series or quadrature cannot reach the requested accuracy."""


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class ModelParams:
    """Dimension ``d``, mass ``m`` and lattice spacing ``a``."""

    d: int
    m: float
    a: float

    def __post_init__(self):
        validate_params(self)

    @property
    def q_pl(self) -> float:
        """Per-step geometric weight of the piecewise-linear ensembles."""
        return math.exp(-0.5 * self.m**2 * self.a**2)

    @property
    def q_lat(self) -> float:
        """Per-step geometric weight of the hypercubic ensembles."""
        return math.exp(-0.5 * self.m**2 * self.a**2 / self.d)

    def with_spacing(self, a: float) -> "ModelParams":
        return ModelParams(self.d, self.m, a)


def validate_params(p: ModelParams) -> ModelParams:
    d, m, a = p.d, p.m, p.a
    if isinstance(d, bool) or int(d) != d or d < 1:
        raise ParameterError(f"dimension must be a positive integer, got {d!r}")
    if not np.isfinite(m) or m <= 0:
        raise ParameterError(f"mass must be positive, got {m!r}")
    if not np.isfinite(a) or a <= 0:
        raise ParameterError(f"lattice spacing must be positive, got {a!r}")
    return p


def as_point(x, d: Optional[int] = None) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ParameterError(f"a point must be a 1-d vector, got shape {arr.shape}")
    if d is not None and arr.shape[0] != d:
        raise ParameterError(f"expected a point in R^{d}, got {arr.shape[0]} coordinates")
    return arr


# ---------------------------------------------------------------------------
# paths


@dataclass(frozen=True, eq=False)
class LatticePath:
    """Nearest-neighbour walk on ``anchor + spacing * Z^d``.

    ``steps`` holds signed axis codes: ``+(j+1)`` moves coordinate ``j`` by
    ``+spacing`` and ``-(j+1)`` by ``-spacing``.
    """

    anchor: np.ndarray
    steps: np.ndarray
    spacing: float

    def __post_init__(self):
        anchor = as_point(self.anchor)
        steps = np.asarray(self.steps, dtype=np.int64).reshape(-1)
        d = anchor.shape[0]
        if steps.size and (np.any(steps == 0) or np.any(np.abs(steps) > d)):
            raise ParameterError(f"step codes must lie in +-1..+-{d}")
        if not self.spacing > 0:
            raise ParameterError("lattice spacing must be positive")
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "steps", steps)
        anchor.setflags(write=False)
        steps.setflags(write=False)

    @property
    def d(self) -> int:
        return self.anchor.shape[0]

    @property
    def N(self) -> int:
        return int(self.steps.shape[0])

    def integer_vertices(self) -> np.ndarray:
        """Vertices in lattice units relative to the anchor, shape (N+1, d)."""
        moves = np.zeros((self.N, self.d), dtype=np.int64)
        if self.N:
            moves[np.arange(self.N), np.abs(self.steps) - 1] = np.sign(self.steps)
        out = np.zeros((self.N + 1, self.d), dtype=np.int64)
        np.cumsum(moves, axis=0, out=out[1:])
        return out

    @property
    def vertices(self) -> np.ndarray:
        return self.anchor + self.spacing * self.integer_vertices()

    @property
    def endpoint(self) -> np.ndarray:
        return self.vertices[-1]

    @classmethod
    def from_vertices(cls, vertices, spacing: float) -> "LatticePath":
        v = np.asarray(vertices, dtype=float)
        diff = np.diff(v, axis=0) / spacing
        rounded = np.rint(diff)
        if not np.allclose(diff, rounded, atol=1e-8):
            raise ParameterError("vertices are not nearest-neighbour lattice moves")
        rounded = rounded.astype(np.int64)
        if np.any(np.abs(rounded).sum(axis=1) != 1):
            raise ParameterError("every step must move exactly one coordinate by +-spacing")
        axis = np.argmax(np.abs(rounded), axis=1)
        sign = rounded[np.arange(len(axis)), axis]
        return cls(v[0], sign * (axis + 1), spacing)


@dataclass(frozen=True, eq=False)
class PLPath:
    """Piecewise-linear path with volume ``T``; step ``i`` is parametrised by
    ``[(i-1)/N, i/N]``."""

    T: float
    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] < 1:
            raise ParameterError("vertices must have shape (N+1, d)")
        if self.T < 0 or not np.isfinite(self.T):
            raise ParameterError("volume T must be non-negative")
        if (v.shape[0] == 1) != (self.T == 0):
            raise ParameterError("T vanishes exactly for the constant path")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def from_spacing(cls, vertices, a: float) -> "PLPath":
        v = np.asarray(vertices, dtype=float)
        n = (v.shape[0] if v.ndim > 0 else 1) - 1
        return cls(a * a * n, v)

    @property
    def d(self) -> int:
        return self.vertices.shape[1]

    @property
    def N(self) -> int:
        return self.vertices.shape[0] - 1

    @property
    def endpoint(self) -> np.ndarray:
        return self.vertices[-1]


Path = Union[PLPath, LatticePath]


def path_vertices(path: Path) -> np.ndarray:
    return path.vertices


def pl_eval(path: Path, t: float) -> np.ndarray:
    """Evaluate the linear interpolant of ``path`` at parameter ``t``."""
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"t must lie in [0, 1], got {t!r}")
    v = path_vertices(path)
    n = v.shape[0] - 1
    if n == 0:
        return v[0].copy()
    u = t * n
    i = round(u)
    if abs(u - i) <= 1e-12 * n:
        return v[i].copy()
    i = min(int(math.floor(u)), n - 1)
    frac = u - i
    return v[i] + frac * (v[i + 1] - v[i])


def pl_eval_many(path: Path, ts) -> np.ndarray:
    return np.array([pl_eval(path, float(t)) for t in np.atleast_1d(ts)])


def modulus_of_continuity(path: Path, delta: float) -> float:
    """``sup{|w(s) - w(t)| : |s - t| < delta}`` computed exactly.

    On each cell of the (s, t) grid the map is the norm of an affine function,
    hence convex, so the supremum over the band is attained at a breakpoint
    paired either with another breakpoint or with a point at distance delta.
    """
    if not delta > 0:
        raise ParameterError("delta must be positive")
    v = path_vertices(path)
    n = v.shape[0] - 1
    if n == 0:
        return 0.0
    grid = np.arange(n + 1) / n
    best = 0.0
    # breakpoint pairs
    span = int(math.floor(delta * n + 1e-12))
    for lag in range(1, min(span, n) + 1):
        if lag / n > delta + 1e-15:
            break
        dist = np.linalg.norm(v[lag:] - v[:-lag], axis=1)
        best = max(best, float(dist.max()))
    # breakpoint paired with t = b +- delta
    for shift in (delta, -delta):
        t = grid + shift
        ok = (t >= 0.0) & (t <= 1.0)
        if np.any(ok):
            pts = np.array([pl_eval(path, float(s)) for s in t[ok]])
            dist = np.linalg.norm(pts - v[ok], axis=1)
            best = max(best, float(dist.max()))
    return best


# ---------------------------------------------------------------------------
# regions


class Region:
    """Open axis-aligned box or open ball in R^d."""

    d: int

    def contains(self, p, closed: bool = False) -> bool:
        raise NotImplementedError

    def signed_distance(self, p) -> float:
        """Negative inside, zero on the boundary, positive outside."""
        raise NotImplementedError

    def segment_interval(self, p, q, closed: bool = False):
        """Parameters ``s`` in [0, 1] with ``p + s (q - p)`` inside, as ``(lo, hi)``
        or ``None`` when the segment misses the region."""
        raise NotImplementedError

    def translated(self, shift, scale: float = 1.0) -> "Region":
        """Image under ``z -> (z - shift) / scale``."""
        raise NotImplementedError

    def exit_parameter(self, p, q, u0: float = 0.0, closed: bool = False):
        """First ``u`` in ``[u0, 1]`` at which ``p + u (q - p)`` leaves the region.

        Assumes the point at ``u0`` is inside (in the closure when ``closed``).
        Leaving the open region means reaching its boundary; leaving the
        closure means moving strictly outside, so a segment that ends on the
        boundary at ``u = 1`` has not left it yet.
        """
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class Box(Region):
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = as_point(self.lower)
        hi = as_point(self.upper, lo.shape[0])
        if not np.all(lo < hi):
            raise ParameterError("box corners must satisfy lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    @property
    def sides(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, p, closed: bool = False) -> bool:
        p = np.asarray(p, dtype=float)
        if closed:
            return bool(np.all((self.lower <= p) & (p <= self.upper)))
        return bool(np.all((self.lower < p) & (p < self.upper)))

    def signed_distance(self, p) -> float:
        p = np.asarray(p, dtype=float)
        gap = np.maximum(self.lower - p, p - self.upper)
        if np.all(gap <= 0):
            return float(np.max(gap))
        return float(np.linalg.norm(np.maximum(gap, 0.0)))

    def boundary_distance(self, p) -> float:
        p = np.asarray(p, dtype=float)
        if self.contains(p, closed=True):
            return float(np.min(np.minimum(p - self.lower, self.upper - p)))
        gap = np.maximum(np.maximum(self.lower - p, p - self.upper), 0.0)
        return float(np.linalg.norm(gap))

    def segment_interval(self, p, q, closed: bool = False):
        # Liang-Barsky clipping
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        dv = q - p
        s_lo, s_hi = 0.0, 1.0
        for j in range(self.d):
            if dv[j] == 0.0:
                inside = (self.lower[j] <= p[j] <= self.upper[j]) if closed else (
                    self.lower[j] < p[j] < self.upper[j])
                if not inside:
                    return None
                continue
            s0 = (self.lower[j] - p[j]) / dv[j]
            s1 = (self.upper[j] - p[j]) / dv[j]
            if s0 > s1:
                s0, s1 = s1, s0
            s_lo = max(s_lo, s0)
            s_hi = min(s_hi, s1)
        if s_lo > s_hi or (not closed and s_lo >= s_hi):
            return None
        return s_lo, s_hi

    def exit_parameter(self, p, q, u0: float = 0.0, closed: bool = False):
        p = np.asarray(p, dtype=float)
        dv = np.asarray(q, dtype=float) - p
        best = math.inf
        for j in range(self.d):
            # skip faces the segment cannot reach before u = 1 (also avoids huge ratios)
            if dv[j] > 0 and self.upper[j] - p[j] <= dv[j]:
                best = min(best, (self.upper[j] - p[j]) / dv[j])
            elif dv[j] < 0 and self.lower[j] - p[j] >= dv[j]:
                best = min(best, (self.lower[j] - p[j]) / dv[j])
        best = max(best, u0)
        if best < 1.0 or (best == 1.0 and not closed):
            return best
        return None

    def translated(self, shift, scale: float = 1.0) -> "Box":
        shift = np.asarray(shift, dtype=float)
        return Box((self.lower - shift) / scale, (self.upper - shift) / scale)

    def faces(self):
        """Yield ``(axis, side, coordinate)`` for the 2d faces (side 0 = lower)."""
        for j in range(self.d):
            yield j, 0, float(self.lower[j])
            yield j, 1, float(self.upper[j])


@dataclass(frozen=True, eq=False)
class Ball(Region):
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_point(self.center))
        if not self.radius > 0:
            raise ParameterError("ball radius must be positive")

    @property
    def d(self) -> int:
        return self.center.shape[0]

    def contains(self, p, closed: bool = False) -> bool:
        r2 = float(np.sum((np.asarray(p, dtype=float) - self.center) ** 2))
        return r2 <= self.radius**2 if closed else r2 < self.radius**2

    def signed_distance(self, p) -> float:
        return float(np.linalg.norm(np.asarray(p, dtype=float) - self.center) - self.radius)

    def boundary_distance(self, p) -> float:
        return abs(self.signed_distance(p))

    def segment_interval(self, p, q, closed: bool = False):
        p = np.asarray(p, dtype=float)
        dv = np.asarray(q, dtype=float) - p
        w = p - self.center
        A = float(dv @ dv)
        B = 2.0 * float(w @ dv)
        C = float(w @ w) - self.radius**2
        if A == 0.0:
            inside = C <= 0 if closed else C < 0
            return (0.0, 1.0) if inside else None
        disc = B * B - 4 * A * C
        if disc < 0 or (not closed and disc == 0):
            return None
        sq = math.sqrt(disc)
        # numerically stable roots
        qq = -0.5 * (B + math.copysign(sq, B))
        r1 = qq / A
        r2 = C / qq if qq != 0 else r1
        s0, s1 = min(r1, r2), max(r1, r2)
        lo, hi = max(s0, 0.0), min(s1, 1.0)
        if lo > hi or (not closed and lo >= hi):
            return None
        return lo, hi

    def exit_parameter(self, p, q, u0: float = 0.0, closed: bool = False):
        p = np.asarray(p, dtype=float)
        dv = np.asarray(q, dtype=float) - p
        w = p - self.center
        A = float(dv @ dv)
        if A == 0.0:
            return None
        B = 2.0 * float(w @ dv)
        C = float(w @ w) - self.radius**2
        disc = max(B * B - 4 * A * C, 0.0)
        sq = math.sqrt(disc)
        # larger root, in the cancellation-free form
        if B >= 0:
            qq = -0.5 * (B + sq)
            hi = C / qq if qq != 0 else 0.0
        else:
            hi = 0.5 * (sq - B) / A
        best = max(hi, u0)
        if best < 1.0 or (best == 1.0 and not closed):
            return best
        return None

    def translated(self, shift, scale: float = 1.0) -> "Ball":
        return Ball((self.center - np.asarray(shift, dtype=float)) / scale, self.radius / scale)


# ---------------------------------------------------------------------------
# random streams


@dataclass
class RandomStream:
    """Reproducible, splittable source of random draws.

    Draws come from a counter-based Philox generator keyed by ``(seed, stream)``
    and any sub-stream indices, so results do not depend on how streams are
    scheduled across workers.
    """

    seed: int
    stream: int = 0
    key: tuple = field(default=(), repr=False)
    _rng: Optional[np.random.Generator] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer")
        if int(self.stream) < 0:
            raise ParameterError("stream index must be non-negative")

    @property
    def rng(self) -> np.random.Generator:
        if self._rng is None:
            seq = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),) + tuple(self.key))
            self._rng = np.random.Generator(np.random.Philox(seq))
        return self._rng

    def substream(self, index: int) -> "RandomStream":
        """Independent child stream; the parent's state is untouched."""
        return RandomStream(self.seed, self.stream, tuple(self.key) + (int(index),))


def ensure_stream(stream: Union[RandomStream, int, None]) -> RandomStream:
    if isinstance(stream, RandomStream):
        return stream
    return RandomStream(0 if stream is None else int(stream))


def points_array(points: Sequence) -> np.ndarray:
    arr = np.asarray(points, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


# ---------------------------------------------------------------------------
# chunked parallel reduction

CHUNK = 65536


def worker_count() -> int:
    """Workers for Monte Carlo loops: ``UNPATH_THREADS`` or all cores."""
    env = os.environ.get("UNPATH_THREADS")
    if env:
        n = int(env)
        if n < 1:
            raise ParameterError("UNPATH_THREADS must be a positive integer")
        return n
    return os.cpu_count() or 1


def run_chunks(stream: RandomStream, n_total: int, fn: Callable[[RandomStream, int], T_],
               chunk: int = CHUNK, workers: Optional[int] = None) -> list[T_]:
    """Apply ``fn(substream, size)`` to fixed-size chunks of a sample budget.

    Chunk ``i`` always uses ``stream.substream(i)`` and results come back in
    chunk order, so the outcome does not depend on the worker count.
    """
    n_total = int(n_total)
    if n_total < 1:
        raise ParameterError("sample budget must be at least 1")
    sizes = [min(chunk, n_total - s) for s in range(0, n_total, chunk)]
    jobs = [(stream.substream(i), size) for i, size in enumerate(sizes)]
    workers = worker_count() if workers is None else workers
    if workers == 1 or len(jobs) == 1:
        return [fn(s, n) for s, n in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))
