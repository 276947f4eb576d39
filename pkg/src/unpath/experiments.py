"""Experiment runners behind the command line.

Each runner takes model parameters, a sweep of spacings, a payload mapping
and a random stream, and returns ``(columns, rows, checks)`` where ``checks``
maps a threshold name to whether it held.
"""

from __future__ import annotations

import itertools
import math
import numpy as np
from scipy import stats

from .charfn import CFSpec, REPORT_COLUMNS, weak_convergence_report
from .core import LatticePath, ModelParams, ParameterError, PLPath, RandomStream, as_point
from .dirichlet import nested_measure
from .geometry import build_cover, escape_times, load_cylinder, mc_cylinder_measure
from .propagators import continuum_G, lattice_G_position, pl_H
from .sampler import (EnsembleKind, EnsembleSpec, lat_bridge_steps, pl_bridge_vertices,
                      sample_step_count, step_ratio)
from .walks import count

# ten (times, freqs, s) triples used when a config gives no battery of its own
DEFAULT_BATTERY = (
    ((1.0,), (1.0,), 0.0),
    ((0.5,), (1.5,), 0.0),
    ((0.3, 1.0), (1.0, -0.5), 0.0),
    ((0.25, 0.75), (0.7, 0.7), 0.0),
    ((0.2, 0.5, 0.9), (0.5, -1.0, 0.8), 0.0),
    ((0.1, 0.4, 1.0), (1.2, 0.3, -0.6), 0.0),
    ((0.33, 0.66, 1.0), (-0.4, 0.9, 0.5), 0.0),
    ((1.0,), (0.5,), 0.3),
    ((0.6,), (2.0,), -0.2),
    ((0.15, 0.85), (0.8, 1.1), 0.5),
)


def default_battery(d: int = 1) -> list:
    out = []
    for t, xi, s in DEFAULT_BATTERY:
        f = np.zeros((len(t), d))
        f[:, 0] = xi
        out.append(CFSpec(t, f, s))
    return out


def _battery(payload: dict, d: int) -> list:
    raw = payload.get("battery")
    if raw is None:
        return default_battery(d)
    out = []
    for i, entry in enumerate(raw):
        try:
            t = [float(v) for v in entry["times"]]
            f = np.array([[float(c) for c in (v if isinstance(v, list) else [v])] for v in entry["freqs"]])
            out.append(CFSpec(t, f, float(entry.get("s", 0.0))))
        except (KeyError, ValueError, ParameterError) as exc:
            raise ParameterError(f"payload.battery[{i}]: {exc}") from None
    return out


# ---------------------------------------------------------------------------


def propagator_convergence(p: ModelParams, a_values, payload: dict, stream: RandomStream):
    xs = payload.get("x", [1.0])
    points = [as_point(v, p.d) for v in (xs if isinstance(xs[0], list) else [xs])]
    tol = float(payload.get("tol", 1e-10))
    cols = ["a", "r", "lattice_G_over_d", "pl_H", "continuum_G", "lattice_abs_error", "pl_abs_error"]
    rows = []
    for x in points:
        r = float(np.linalg.norm(x))
        G = continuum_G(p, r).value
        for a in a_values:
            pa = p.with_spacing(a)
            lat = lattice_G_position(pa, x, tol=tol).value / p.d
            H = pl_H(pa, r).value
            rows.append(dict(a=a, r=r, lattice_G_over_d=lat, pl_H=H, continuum_G=G,
                             lattice_abs_error=abs(lat - G), pl_abs_error=abs(H - G)))
    checks = {}
    for x in points:
        r = float(np.linalg.norm(x))
        errs = [row["lattice_abs_error"] for row in rows if row["r"] == r]
        checks[f"lattice_monotone_r={r:g}"] = all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
        G = next(row["continuum_G"] for row in rows if row["r"] == r)
        checks[f"lattice_final_within_2pct_r={r:g}"] = errs[-1] < 0.02 * G
    return cols, rows, checks


def cf_convergence(p: ModelParams, a_values, payload: dict, stream: RandomStream):
    kind = payload.get("kind", "pl")
    x = as_point(payload.get("x", [0.0] * p.d), p.d)
    y = payload.get("y")
    y = as_point(y, p.d) if y is not None else None
    threshold = float(payload.get("threshold", 0.01))
    rep = weak_convergence_report(p, a_values, _battery(payload, p.d), x, kind, y)
    rows = [dict(r) for r in rep.rows]
    checks = {"monotone": rep.all_monotone}
    final = [r for r in rows if r["a"] == a_values[-1]]
    checks["final_below_threshold"] = all(r["rel_error"] < threshold for r in final)
    return list(REPORT_COLUMNS), rows, checks


def cylinder_measure(p: ModelParams, a_values, payload: dict, stream: RandomStream, budget: int):
    if "cylinder" not in payload:
        raise ParameterError("payload.cylinder is required")
    cyl = load_cylinder(payload["cylinder"])
    semantics = payload.get("semantics", "open")
    ref = None
    if cyl.boxes_only:
        ref = nested_measure(list(cyl.regions), p.m, cyl.x, cyl.y)
    cols = ["a", "estimate", "stderr", "members", "draws", "reference", "z_score"]
    rows = []
    for i, a in enumerate(a_values):
        pa = p.with_spacing(a)
        spec = EnsembleSpec(pa, cyl.x, EnsembleKind.LAT_BRIDGE, budget, stream.substream(i), cyl.y)
        est = mc_cylinder_measure(spec, cyl, semantics)
        z = (est.estimate - ref) / est.stderr if ref is not None and est.stderr > 0 else float("nan")
        rows.append(dict(a=a, estimate=est.estimate, stderr=est.stderr, members=est.members,
                         draws=est.raw.n_draws, reference=ref if ref is not None else float("nan"),
                         z_score=z))
    checks = {}
    if ref is not None:
        checks["final_within_3_sigma"] = abs(rows[-1]["z_score"]) <= 3.0
    return cols, rows, checks


def cover_demo(p: ModelParams, a_values, payload: dict, stream: RandomStream, budget: int):
    a = a_values[0]
    N = int(payload.get("steps", 50))
    eps = float(payload.get("eps", 3 * a))
    rng = stream.rng
    axis = rng.integers(0, p.d, size=N)
    sign = 2 * rng.integers(0, 2, size=N) - 1
    lat = LatticePath(np.zeros(p.d), sign * (axis + 1), a)
    path = PLPath(a * a * N, lat.vertices)
    cyl = build_cover(path, eps)
    cols = ["ball", "radius"] + [f"c{j}" for j in range(p.d)] + ["exit_time"]
    tr = escape_times(path, cyl)
    rows = []
    for i, ball in enumerate(cyl.regions):
        row = dict(ball=i, radius=ball.radius, exit_time=tr.times[i])
        row.update({f"c{j}": float(ball.center[j]) for j in range(p.d)})
        rows.append(row)
    return cols, rows, {"input_is_member": tr.member}


# ---------------------------------------------------------------------------
# sampler self-test


def enumerate_walks(d: int, N: int, k) -> list:
    """All N-step walks on Z^d with displacement k, as tuples of step codes."""
    codes = [s * (j + 1) for j in range(d) for s in (1, -1)]
    k = tuple(int(v) for v in np.atleast_1d(k))
    out = []
    for w in itertools.product(codes, repeat=N):
        disp = [0] * d
        for c in w:
            disp[abs(c) - 1] += 1 if c > 0 else -1
        if tuple(disp) == k:
            out.append(w)
    return out


def bridge_chi2(d: int, N: int, k, n_draws: int, stream: RandomStream):
    """Chi-squared test of the lattice bridge sampler against enumeration."""
    walks = enumerate_walks(d, N, k)
    if len(walks) != count(N, k):
        raise AssertionError("enumeration disagrees with the walk count")
    index = {w: i for i, w in enumerate(walks)}
    counts = np.zeros(len(walks), dtype=np.int64)
    rng = stream.rng
    for _ in range(n_draws):
        counts[index[tuple(int(c) for c in lat_bridge_steps(d, N, k, rng))]] += 1
    if len(walks) == 1:
        return 0.0, 0, 1.0
    res = stats.chisquare(counts)
    return float(res.statistic), len(walks) - 1, float(res.pvalue)


def step_count_chi2(kind, p: ModelParams, n_draws: int, stream: RandomStream):
    """Chi-squared test of the step-count histogram against (1 - q) q^N."""
    q = step_ratio(kind, p)
    Ns = sample_step_count(kind, p, stream, size=n_draws)
    # equiprobable bins from the geometric quantiles
    n_bins = 50
    edges = [0]
    for b in range(1, n_bins):
        edges.append(int(math.ceil(math.log(1 - b / n_bins) / math.log(q))))
    edges = sorted(set(edges))
    obs = np.array([np.sum((Ns >= lo) & (Ns < hi)) for lo, hi in zip(edges, edges[1:])] + [np.sum(Ns >= edges[-1])])
    cdf = lambda n: 1 - q**n
    probs = np.array([cdf(hi) - cdf(lo) for lo, hi in zip(edges, edges[1:])] + [q ** edges[-1]])
    res = stats.chisquare(obs, probs * n_draws)
    return float(res.statistic), len(obs) - 1, float(res.pvalue)


def _bridge_cases():
    # every N in range, each at its most populous displacement plus an off-centre one
    cases = []
    for N in range(1, 9):
        cases.append((1, N, (N % 2,)))
        if N >= 4:
            cases.append((1, N, (N - 2,)))
    for N in range(1, 7):
        cases.append((2, N, (N % 2, 0)))
        if N % 2 == 0:
            cases.append((2, N, (1, 1)))
        elif N >= 3:
            cases.append((2, N, (2, 1)))
    return tuple(cases)


BRIDGE_CASES = _bridge_cases()


def sampler_selftest(p: ModelParams, a_values, payload: dict, stream: RandomStream, budget: int):
    cols = ["test", "statistic", "dof", "p_value", "passed"]
    alpha = float(payload.get("alpha", 0.01))
    rows = []
    for i, (d, N, k) in enumerate(BRIDGE_CASES):
        stat, dof, pv = bridge_chi2(d, N, k, budget, stream.substream(i))
        rows.append(dict(test=f"lat_bridge_d{d}_N{N}_k{'_'.join(map(str, k))}", statistic=stat,
                         dof=dof, p_value=pv, passed=pv >= alpha))
    for j, kind in enumerate(("pl_free", "lat_free")):
        stat, dof, pv = step_count_chi2(kind, p.with_spacing(a_values[0]), budget, stream.substream(100 + j))
        rows.append(dict(test=f"step_count_{kind}", statistic=stat, dof=dof, p_value=pv, passed=pv >= alpha))
    # the Gaussian bridge must end exactly at y
    rng = stream.substream(200).rng
    x = np.zeros(p.d)
    y = np.full(p.d, 0.7)
    worst = 0.0
    for N in (1, 2, 5, 40):
        v = pl_bridge_vertices(p.with_spacing(a_values[0]), x, y, N, rng, size=64)
        worst = max(worst, float(np.max(np.abs(v[:, -1] - y))))
    rows.append(dict(test="pl_bridge_endpoint_exact", statistic=worst, dof=0, p_value=float("nan"),
                     passed=worst == 0.0))
    checks = {r["test"]: bool(r["passed"]) for r in rows}
    return cols, rows, checks


RUNNERS = {
    "propagator_convergence": propagator_convergence,
    "cf_convergence": cf_convergence,
    "cylinder_measure": cylinder_measure,
    "cover_demo": cover_demo,
    "sampler_selftest": sampler_selftest,
}

NEEDS_BUDGET = {"cylinder_measure", "cover_demo", "sampler_selftest"}
