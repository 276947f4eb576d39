"""Exact samplers for the discrete path ensembles.

Four ensembles are supported:

* ``pl_free``: piecewise-linear paths from ``x`` with Gaussian steps of variance ``a^2``.
* ``lat_free``: nearest-neighbour walks on ``x + a Z^d``.
* ``pl_bridge``, ``lat_bridge``: the same, pinned to end at ``y``.

The number of steps is geometric in every case.  Bridges are returned with a
weight equal to the volume of the N-step ensemble, so weighted averages over
draws estimate integrals against the (non-normalised) two-endpoint measures.
"""

from __future__ import annotations

import enum
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, TextIO, Union

import numpy as np

from . import _kernels
from .core import (EmptyEnsembleError, LatticePath, ModelParams, ParameterError, PLPath,
                   RandomStream, as_point, ensure_stream, run_chunks)
from .propagators import heat_kernel
from .walks import log_allocation_weights, log_count, reachable


class EnsembleKind(str, enum.Enum):
    PL_FREE = "pl_free"
    LAT_FREE = "lat_free"
    PL_BRIDGE = "pl_bridge"
    LAT_BRIDGE = "lat_bridge"

    @property
    def lattice(self) -> bool:
        return self in (EnsembleKind.LAT_FREE, EnsembleKind.LAT_BRIDGE)

    @property
    def bridge(self) -> bool:
        return self in (EnsembleKind.PL_BRIDGE, EnsembleKind.LAT_BRIDGE)


def lattice_offset(x, y, a: float) -> np.ndarray:
    """Integer vector ``(y - x)/a``; raises if ``y - x`` is off the lattice."""
    u = (as_point(y) - as_point(x)) / a
    k = np.rint(u)
    if not np.all(np.abs(u - k) <= 1e-9 * np.maximum(1.0, np.abs(u))):
        raise EmptyEnsembleError("y - x is not in a Z^d: no lattice path joins the endpoints")
    return k.astype(np.int64)


@dataclass(frozen=True)
class EnsembleSpec:
    params: ModelParams
    x: np.ndarray
    kind: EnsembleKind
    n_samples: int = 1
    stream: RandomStream = field(default_factory=lambda: RandomStream(0))
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        kind = EnsembleKind(self.kind)
        d = self.params.d
        x = as_point(self.x, d)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "stream", ensure_stream(self.stream))
        if int(self.n_samples) < 1:
            raise ParameterError("sample count must be at least 1")
        if kind.bridge:
            if self.y is None:
                raise ParameterError(f"{kind.value} needs a second endpoint y")
            y = as_point(self.y, d)
            if np.array_equal(x, y):
                raise ParameterError("two-endpoint ensembles need x != y")
            object.__setattr__(self, "y", y)
            if kind is EnsembleKind.LAT_BRIDGE:
                lattice_offset(x, y, self.params.a)
        elif self.y is not None:
            object.__setattr__(self, "y", as_point(self.y, d))

    @property
    def q(self) -> float:
        return self.params.q_lat if self.kind.lattice else self.params.q_pl

    @property
    def offset(self) -> np.ndarray:
        return lattice_offset(self.x, self.y, self.params.a)

    def with_stream(self, stream: RandomStream, n_samples: Optional[int] = None) -> "EnsembleSpec":
        return EnsembleSpec(self.params, self.x, self.kind,
                            self.n_samples if n_samples is None else n_samples, stream, self.y)


@dataclass(frozen=True, eq=False)
class WeightedSample:
    path: Union[PLPath, LatticePath]
    weight: float = 1.0

    def __post_init__(self):
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ParameterError("sample weights must be positive and finite")


# ---------------------------------------------------------------------------
# step counts


def step_ratio(kind, p: ModelParams) -> float:
    return p.q_lat if EnsembleKind(kind).lattice else p.q_pl


def sample_step_count(kind, p: ModelParams, stream, size=None):
    """Draw N with P(N) = (1 - q) q^N."""
    q = step_ratio(kind, p)
    rng = ensure_stream(stream).rng
    n = rng.geometric(1.0 - q, size=size) - 1
    return int(n) if size is None else n.astype(np.int64)


# ---------------------------------------------------------------------------
# free ensembles


def _pl_free_path(p: ModelParams, x: np.ndarray, N: int, rng) -> PLPath:
    v = np.empty((N + 1, p.d))
    v[0] = x
    if N:
        v[1:] = x + np.cumsum(rng.normal(0.0, p.a, size=(N, p.d)), axis=0)
    return PLPath(p.a**2 * N, v)


def _lat_free_steps(d: int, N: int, rng) -> np.ndarray:
    axis = rng.integers(0, d, size=N)
    sign = 2 * rng.integers(0, 2, size=N) - 1
    return sign * (axis + 1)


def sample_pl_free(spec: EnsembleSpec, N: Optional[int] = None) -> WeightedSample:
    if spec.kind is not EnsembleKind.PL_FREE:
        raise ParameterError("sample_pl_free needs a pl_free spec")
    if N is None:
        N = sample_step_count(spec.kind, spec.params, spec.stream)
    return WeightedSample(_pl_free_path(spec.params, spec.x, int(N), spec.stream.rng))


def sample_lat_free(spec: EnsembleSpec, N: Optional[int] = None) -> WeightedSample:
    if spec.kind is not EnsembleKind.LAT_FREE:
        raise ParameterError("sample_lat_free needs a lat_free spec")
    if N is None:
        N = sample_step_count(spec.kind, spec.params, spec.stream)
    steps = _lat_free_steps(spec.params.d, int(N), spec.stream.rng)
    return WeightedSample(LatticePath(spec.x, steps, spec.params.a))


# ---------------------------------------------------------------------------
# bridges


def pl_bridge_weight(p: ModelParams, x, y, N: int) -> float:
    """Volume of the N-step piecewise-linear bridge ensemble."""
    r = float(np.linalg.norm(as_point(y) - as_point(x)))
    return heat_kernel(p, p.a**2 * N, r)


def lat_bridge_log_weight(p: ModelParams, k, N: int) -> float:
    """Log of ``a^-d (2d)^-N #walks(N, k)``; ``-inf`` when unreachable."""
    return -p.d * math.log(p.a) - N * math.log(2 * p.d) + log_count(N, k)


def pl_bridge_vertices(p: ModelParams, x, y, N: int, rng, size: Optional[int] = None) -> np.ndarray:
    """Exact Gaussian bridge vertices, shape (N+1, d) or (size, N+1, d).

    Vertex ``i`` given vertex ``i-1`` is Gaussian with mean
    ``x_{i-1} + (y - x_{i-1})/(N-i+1)`` and variance ``a^2 (N-i)/(N-i+1)``.
    The last vertex is set to ``y`` itself.
    """
    x = as_point(x, p.d)
    y = as_point(y, p.d)
    batch = 1 if size is None else int(size)
    v = np.empty((batch, N + 1, p.d))
    v[:, 0] = x
    for i in range(1, N):
        left = N - i + 1
        mean = v[:, i - 1] + (y - v[:, i - 1]) / left
        sd = p.a * math.sqrt((N - i) / left)
        v[:, i] = mean + sd * rng.standard_normal((batch, p.d))
    v[:, N] = y
    return v[0] if size is None else v


def sample_pl_bridge(spec: EnsembleSpec, N: int) -> WeightedSample:
    if spec.kind is not EnsembleKind.PL_BRIDGE:
        raise ParameterError("sample_pl_bridge needs a pl_bridge spec")
    N = int(N)
    if N < 1:
        raise ParameterError("a bridge needs N >= 1 steps")
    p = spec.params
    v = pl_bridge_vertices(p, spec.x, spec.y, N, spec.stream.rng)
    return WeightedSample(PLPath(p.a**2 * N, v), pl_bridge_weight(p, spec.x, spec.y, N))


def _shuffled_1d(n: int, k: int, rng) -> np.ndarray:
    up = (n + k) // 2
    s = np.full(n, -1, dtype=np.int64)
    s[:up] = 1
    rng.shuffle(s)
    return s


def lat_bridge_steps(d: int, N: int, k, rng) -> np.ndarray:
    """Signed axis codes of a uniform N-step walk with displacement ``k``."""
    k = np.asarray(k, dtype=np.int64)
    if not reachable(N, k):
        raise EmptyEnsembleError(f"no {N}-step walk has displacement {tuple(int(v) for v in k)}")
    if d <= 2:
        return _kernels.sample_bridge_steps(rng, N, d, int(k[0]), int(k[1]) if d == 2 else 0)
    # allocate steps to axes with the exact walk-count weights, then place
    # a uniform 1-d bridge on each axis and interleave uniformly
    counts = []
    left = N
    for j in range(d - 1):
        n1, lw = log_allocation_weights(left, k[j:])
        w = np.exp(lw - lw.max())
        nj = int(n1[rng.choice(len(n1), p=w / w.sum())])
        counts.append(nj)
        left -= nj
    counts.append(left)
    labels = np.repeat(np.arange(d), counts)
    rng.shuffle(labels)
    steps = np.empty(N, dtype=np.int64)
    for j in range(d):
        where = labels == j
        steps[where] = _shuffled_1d(counts[j], int(k[j]), rng) * (j + 1)
    return steps


def sample_lat_bridge(spec: EnsembleSpec, N: int) -> WeightedSample:
    if spec.kind is not EnsembleKind.LAT_BRIDGE:
        raise ParameterError("sample_lat_bridge needs a lat_bridge spec")
    N = int(N)
    if N < 1:
        raise ParameterError("a bridge needs N >= 1 steps")
    p = spec.params
    k = spec.offset
    steps = lat_bridge_steps(p.d, N, k, spec.stream.rng)
    w = math.exp(lat_bridge_log_weight(p, k, N))
    return WeightedSample(LatticePath(spec.x, steps, p.a), w)


# ---------------------------------------------------------------------------
# ensembles


def draw_ensemble(spec: EnsembleSpec) -> tuple[list[WeightedSample], int]:
    """Draw ``spec.n_samples`` paths with geometric N.

    Returns the samples with positive weight and the total number of draws.
    Bridge draws whose N admits no path (N = 0, or wrong parity) carry weight
    zero; they are dropped from the list but still count as draws, so
    ``sum(weights) / n_draws`` estimates the ensemble's total volume.
    """
    out = []
    rng = spec.stream.rng
    Ns = sample_step_count(spec.kind, spec.params, spec.stream, size=spec.n_samples)
    p = spec.params
    kind = spec.kind
    k = spec.offset if kind is EnsembleKind.LAT_BRIDGE else None
    for N in Ns:
        N = int(N)
        if kind is EnsembleKind.PL_FREE:
            out.append(WeightedSample(_pl_free_path(p, spec.x, N, rng)))
        elif kind is EnsembleKind.LAT_FREE:
            out.append(WeightedSample(LatticePath(spec.x, _lat_free_steps(p.d, N, rng), p.a)))
        elif kind is EnsembleKind.PL_BRIDGE:
            if N >= 1:
                v = pl_bridge_vertices(p, spec.x, spec.y, N, rng)
                out.append(WeightedSample(PLPath(p.a**2 * N, v), pl_bridge_weight(p, spec.x, spec.y, N)))
        else:
            if N >= 1 and reachable(N, k):
                steps = lat_bridge_steps(p.d, N, k, rng)
                out.append(WeightedSample(LatticePath(spec.x, steps, p.a),
                                          math.exp(lat_bridge_log_weight(p, k, N))))
    return out, int(spec.n_samples)


def step_weights(spec: EnsembleSpec, Ns: np.ndarray) -> np.ndarray:
    """Bridge weight as a function of N (zero where no path exists)."""
    Ns = np.asarray(Ns, dtype=np.int64)
    p = spec.params
    if spec.kind is EnsembleKind.PL_BRIDGE:
        r = float(np.linalg.norm(spec.y - spec.x))
        t = p.a**2 * np.maximum(Ns, 1)
        w = (2 * math.pi * t) ** (-p.d / 2) * np.exp(-r * r / (2 * t))
        return np.where(Ns >= 1, w, 0.0)
    if spec.kind is EnsembleKind.LAT_BRIDGE:
        k = spec.offset
        uniq, inv = np.unique(Ns, return_inverse=True)
        lw = np.array([lat_bridge_log_weight(p, k, int(n)) if n >= 1 else -np.inf for n in uniq])
        return np.exp(lw)[inv]
    return np.ones(Ns.shape)


@dataclass(frozen=True)
class MCEstimate:
    value: float
    stderr: float
    n_draws: int

    def __float__(self):
        return self.value


def _moments(parts) -> MCEstimate:
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    n = sum(p[2] for p in parts)
    mean = s1 / n
    var = max(s2 / n - mean * mean, 0.0)
    return MCEstimate(mean, math.sqrt(var / max(n - 1, 1)), n)


def mc_volume(spec: EnsembleSpec) -> MCEstimate:
    """Monte Carlo estimate of the total volume of a bridge ensemble.

    Only N has to be drawn: the path itself does not enter the weight.
    """
    if not spec.kind.bridge:
        raise ParameterError("volumes are only defined for bridge ensembles")

    def chunk(stream, size):
        w = step_weights(spec, sample_step_count(spec.kind, spec.params, stream, size=size))
        return float(w.sum()), float(np.dot(w, w)), size

    return _moments(run_chunks(spec.stream, spec.n_samples, chunk))


# ---------------------------------------------------------------------------
# text serialisation


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_path(sample: Union[WeightedSample, PLPath, LatticePath], params: ModelParams,
               kind, fh: Optional[TextIO] = None) -> str:
    """Serialise a path: ``key=value`` header lines, then one vertex per line."""
    if not isinstance(sample, WeightedSample):
        sample = WeightedSample(sample)
    path = sample.path
    kind = EnsembleKind(kind)
    buf = io.StringIO()
    for key, val in (("kind", kind.value), ("d", str(params.d)), ("m", _fmt(params.m)),
                     ("a", _fmt(params.a)), ("N", str(path.N)), ("weight", _fmt(sample.weight))):
        buf.write(f"{key}={val}\n")
    for row in path.vertices:
        buf.write(" ".join(_fmt(c) for c in row) + "\n")
    text = buf.getvalue()
    if fh is not None:
        fh.write(text)
    return text


def read_path(src: Union[str, TextIO, Iterable[str]]) -> tuple[WeightedSample, ModelParams, EnsembleKind]:
    lines = src.splitlines() if isinstance(src, str) else [ln.rstrip("\n") for ln in src]
    header = {}
    rows = []
    for ln in lines:
        if not ln.strip():
            continue
        if "=" in ln:
            key, val = ln.split("=", 1)
            header[key.strip()] = val.strip()
        else:
            rows.append([float(c) for c in ln.split()])
    missing = {"kind", "d", "m", "a", "N", "weight"} - header.keys()
    if missing:
        raise ParameterError(f"path header lacks {sorted(missing)}")
    kind = EnsembleKind(header["kind"])
    params = ModelParams(int(header["d"]), float(header["m"]), float(header["a"]))
    v = np.array(rows, dtype=float).reshape(-1, params.d)
    if v.shape[0] != int(header["N"]) + 1:
        raise ParameterError("vertex count does not match N")
    if kind.lattice:
        path = LatticePath.from_vertices(v, params.a) if v.shape[0] > 1 else LatticePath(v[0], [], params.a)
    else:
        path = PLPath.from_spacing(v, params.a)
    return WeightedSample(path, float(header["weight"])), params, kind
