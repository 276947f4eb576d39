"""Dirichlet Green functions of ``2 (-Laplacian + m^2)^-1`` on boxes.

Three representations are available for ``green_box``:

``resolvent``
    Sine modes in all directions but one, and the exact one-dimensional
    resolvent along the remaining axis (the one where x and y are farthest
    apart).  Terms decay like ``exp(-k pi |x_j - y_j| / L)``.  This is the
    default.
``eigen``
    The full eigenfunction expansion.  In d = 1 the slowly decaying part is
    summed in closed form and only a ``k^-4`` remainder is truncated.
``images``
    The proper-time integral of the product of one-dimensional image sums of
    the heat kernel, integrated by adaptive quadrature.

Boundary integrals use ``|dG/dn|`` on the faces.  A path from ``x`` first
hits the boundary at ``z`` with density ``(1/2) |dG/dn|(x, z)`` per unit
surface (this carries the factor 1/2 of the generator ``(1/2)(-Laplacian)``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .core import Box, ConvergenceError, ModelParams, ParameterError, as_point
from .propagators import continuum_G


class GreenMethod(str, enum.Enum):
    RESOLVENT = "resolvent"
    EIGEN = "eigen"
    IMAGES = "images"


@dataclass(frozen=True, eq=False)
class DirichletBox:
    box: Box
    m: float
    K: Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.box, Box):
            raise ParameterError("DirichletBox needs a Box region")
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ParameterError("mass must be positive")
        if self.K is not None and int(self.K) < 1:
            raise ParameterError("series truncation K must be at least 1")

    @property
    def d(self) -> int:
        return self.box.d

    @property
    def lower(self) -> np.ndarray:
        return self.box.lower

    @property
    def sides(self) -> np.ndarray:
        return self.box.sides


@dataclass(frozen=True)
class GreenResult:
    value: float
    error: float
    method: GreenMethod
    inside: bool = True

    def __float__(self):
        return self.value


# ---------------------------------------------------------------------------
# one-dimensional pieces


def _resolvent_1d(kappa, u, v, L):
    """Green function of ``-d^2/dz^2 + kappa^2`` on (0, L) with zero boundary values,
    written without overflowing exponentials."""
    lo = np.minimum(u, v)
    hi = np.maximum(u, v)
    num = np.exp(-kappa * (hi - lo)) * (-np.expm1(-2 * kappa * lo)) * (-np.expm1(-2 * kappa * (L - hi)))
    return num / (2 * kappa * (-np.expm1(-2 * kappa * L)))


def _sinh_ratio(kappa, xi, L):
    """``sinh(kappa xi) / sinh(kappa L)`` for 0 <= xi <= L."""
    return np.exp(-kappa * (L - xi)) * (-np.expm1(-2 * kappa * xi)) / (-np.expm1(-2 * kappa * L))


def _mode_grid(K: Sequence[int]):
    if len(K) == 0:
        return np.zeros((1, 0), dtype=np.int64)
    axes = [np.arange(1, k + 1) for k in K]
    return np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")], axis=1)


def _modes_needed(L: float, sep: float, tol: float, cap: int) -> int:
    if sep <= 0:
        return cap
    return int(min(cap, math.ceil(L * math.log(1.0 / tol) / (math.pi * sep)) + 2))


def _transverse(db: DirichletBox, axis: int, X: np.ndarray, Y: np.ndarray, K: Sequence[int]):
    """Sine-mode products over all axes except ``axis``.

    Returns ``(prod, lam)`` with ``prod`` of shape (M, modes) holding
    ``prod_l (2/L_l) sin(k_l pi x_l / L_l) sin(k_l pi y_l / L_l)`` and
    ``lam`` the transverse eigenvalues.
    """
    others = [l for l in range(db.d) if l != axis]
    modes = _mode_grid(K)
    prod = np.ones((X.shape[0], modes.shape[0]))
    lam = np.zeros(modes.shape[0])
    for c, l in enumerate(others):
        L = db.sides[l]
        w = modes[:, c] * math.pi / L
        prod *= (2.0 / L) * np.sin(np.outer(X[:, l] - db.lower[l], w)) * np.sin(np.outer(Y[:, l] - db.lower[l], w))
        lam += w * w
    return prod, lam


# ---------------------------------------------------------------------------
# Green function


def _inside(box: Box, X: np.ndarray) -> np.ndarray:
    return np.all((X > box.lower) & (X < box.upper), axis=-1)


def green_box_many(db: DirichletBox, X, y, tol: float = 1e-12, cap: int = 20000):
    """Resolvent representation at many points ``X`` against one point ``y``.

    Returns ``(values, errors)``; points outside the open box give 0.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = as_point(y, db.d)
    vals = np.zeros(X.shape[0])
    errs = np.zeros(X.shape[0])
    if not db.box.contains(y):
        return vals, errs
    ok = _inside(db.box, X)
    if not np.any(ok):
        return vals, errs
    d = db.d
    sep = np.abs(X - y)
    axis_of = np.argmax(sep, axis=1)
    for axis in range(d):
        sel = np.where(ok & (axis_of == axis))[0]
        if sel.size == 0:
            continue
        L = db.sides[axis]
        s_min = float(np.min(sep[sel, axis]))
        if d == 1:
            K = []
        elif db.K is not None:
            K = [int(db.K)] * (d - 1)
        else:
            K = [_modes_needed(db.sides[l], s_min, tol, cap if d == 2 else int(math.sqrt(cap) * 8))
                 for l in range(d) if l != axis]
        if d > 1 and K and s_min == 0.0:
            raise ParameterError("coincident points: the Dirichlet Green function diverges for d >= 2")
        Xs = X[sel]
        Y = np.broadcast_to(y, Xs.shape)
        prod, lam = _transverse(db, axis, Xs, Y, K)
        kappa = np.sqrt(db.m**2 + lam)
        g = _resolvent_1d(kappa[None, :], (Xs[:, axis] - db.lower[axis])[:, None],
                          y[axis] - db.lower[axis], L)
        terms = 2.0 * prod * g
        vals[sel] = terms.sum(axis=1)
        if d > 1:
            modes = _mode_grid(K)
            shell = np.any(modes == np.array(K)[None, :], axis=1)
            errs[sel] = np.abs(terms[:, shell]).sum(axis=1) * 2
    return vals, errs


def _eigen_1d(db: DirichletBox, x: np.ndarray, y: np.ndarray, K: int) -> tuple:
    # 1/(c^2 k^2 + m^2) = 1/(c^2 k^2) - m^2 / (c^2 k^2 (c^2 k^2 + m^2)); the first
    # part is summed exactly via sum_k cos(k t)/k^2 = pi^2/6 - pi t/2 + t^2/4
    L = db.sides[0]
    u = float(x[0] - db.lower[0])
    v = float(y[0] - db.lower[0])
    c = math.pi / L
    m2 = db.m**2

    def clausen2(t):
        t = t % (2 * math.pi)
        return math.pi**2 / 6 - math.pi * t / 2 + t * t / 4

    # sin(a) sin(b) = (cos(a - b) - cos(a + b)) / 2
    base = (2.0 / L) * 0.5 * (clausen2(c * (u - v)) - clausen2(c * (u + v))) / c**2
    k = np.arange(1, K + 1, dtype=float)
    ck2 = (c * k) ** 2
    rest = (2.0 / L) * np.sin(c * k * u) * np.sin(c * k * v) * (-m2 / (ck2 * (ck2 + m2)))
    err = (2.0 / L) * m2 / (c**4 * 3 * K**3)
    return 2.0 * (base + float(rest.sum())), 2.0 * err


def _eigen(db: DirichletBox, x: np.ndarray, y: np.ndarray, K: int) -> tuple:
    if db.d == 1:
        return _eigen_1d(db, x, y, K)
    modes = _mode_grid([K] * db.d)
    prod = np.ones(modes.shape[0])
    lam = np.zeros(modes.shape[0])
    for l in range(db.d):
        L = db.sides[l]
        w = modes[:, l] * math.pi / L
        prod *= (2.0 / L) * np.sin(w * (x[l] - db.lower[l])) * np.sin(w * (y[l] - db.lower[l]))
        lam += w * w
    terms = 2.0 * prod / (lam + db.m**2)
    shell = np.any(modes == K, axis=1)
    return float(terms.sum()), float(np.abs(terms[shell]).sum())


def dirichlet_heat_kernel_1d(t: float, u: float, v: float, L: float) -> float:
    """Heat kernel of ``(1/2) d^2/dz^2`` on (0, L) with zero boundary values, by images."""
    n_img = int(math.ceil((10 * math.sqrt(t) + L) / (2 * L))) + 1
    n = np.arange(-n_img, n_img + 1)
    z1 = u - v + 2 * n * L
    z2 = u + v + 2 * n * L
    c = 1.0 / math.sqrt(2 * math.pi * t)
    return float(c * (np.exp(-z1 * z1 / (2 * t)).sum() - np.exp(-z2 * z2 / (2 * t)).sum()))


def _images(db: DirichletBox, x: np.ndarray, y: np.ndarray, tol: float) -> tuple:
    u = x - db.lower
    v = y - db.lower
    L = db.sides
    rate = 0.5 * (db.m**2 + float(np.sum((math.pi / L) ** 2)))
    t_max = math.log(1.0 / min(tol, 1e-8) * 1e4) / rate

    def f(t):
        if t <= 0:
            return 0.0
        val = math.exp(-0.5 * db.m**2 * t)
        for j in range(db.d):
            val *= dirichlet_heat_kernel_1d(t, u[j], v[j], L[j])
        return val

    r2 = float(np.sum((x - y) ** 2))
    split = sorted({max(r2 / db.d, 1e-6), min(float(np.min(L)) ** 2, t_max / 2), t_max})
    pts = [0.0] + [s for s in split if s < t_max] + [t_max]
    total = 0.0
    err = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        if b <= a:
            continue
        val, e = integrate.quad(f, a, b, epsabs=tol * 1e-2, epsrel=tol, limit=500)
        total += val
        err += e
    return total, err


def green_box(db: DirichletBox, x, y, method: str = "resolvent", tol: float = 1e-12,
              full_output: bool = False):
    """Dirichlet Green function ``G_A^D(x, y)``, extended by zero outside the box.

    Arguments on the boundary or outside give 0; with ``full_output`` the
    returned :class:`GreenResult` has ``inside=False`` in that case.
    """
    method = GreenMethod(method)
    x = as_point(x, db.d)
    y = as_point(y, db.d)
    if not (db.box.contains(x) and db.box.contains(y)):
        res = GreenResult(0.0, 0.0, method, inside=False)
        return res if full_output else 0.0
    if db.d >= 2 and np.array_equal(x, y):
        raise ParameterError("coincident points: the Dirichlet Green function diverges for d >= 2")
    if method is GreenMethod.RESOLVENT:
        v, e = green_box_many(db, x[None, :], y, tol)
        value, err = float(v[0]), float(e[0])
    elif method is GreenMethod.EIGEN:
        K = int(db.K) if db.K is not None else (20000 if db.d == 1 else (600 if db.d == 2 else 80))
        value, err = _eigen(db, x, y, K)
    else:
        value, err = _images(db, x, y, min(tol * 1e2, 1e-10))
    res = GreenResult(value, err, method)
    return res if full_output else value


# ---------------------------------------------------------------------------
# normal derivatives and boundary quadrature


def _face_of(box: Box, z: np.ndarray, tol: float = 1e-12):
    """(axis, side) of the single open face containing z."""
    hits = []
    scale = np.maximum(1.0, np.abs(box.upper) + np.abs(box.lower))
    for j in range(box.d):
        if abs(z[j] - box.lower[j]) <= tol * scale[j]:
            hits.append((j, 0))
        elif abs(z[j] - box.upper[j]) <= tol * scale[j]:
            hits.append((j, 1))
    if len(hits) != 1:
        if not hits:
            raise ParameterError("z is not on the boundary of the box")
        raise ParameterError("z lies on an edge or corner of the box")
    j, _ = hits[0]
    others = [l for l in range(box.d) if l != j]
    if any(not box.lower[l] < z[l] < box.upper[l] for l in others):
        raise ParameterError("z is not on the boundary of the box")
    return hits[0]


def normal_derivative_many(db: DirichletBox, X, face: tuple, Z, tol: float = 1e-12,
                           cap: int = 20000) -> np.ndarray:
    """``|dG^D/dn|(x, z)`` for sources X (M, d) and points Z (P, d) on one face.

    Rows for sources outside the open box are zero.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    axis, side = face
    d = db.d
    L = db.sides[axis]
    out = np.zeros((X.shape[0], Z.shape[0]))
    ok = _inside(db.box, X)
    if not np.any(ok):
        return out
    Xs = X[ok]
    xi = Xs[:, axis] - db.lower[axis]
    dist = (L - xi) if side == 1 else xi
    if d == 1:
        lam = np.zeros(1)
        prod = np.ones((Xs.shape[0], Z.shape[0], 1))
    else:
        s_min = float(np.min(dist))
        K = [int(db.K)] * (d - 1) if db.K is not None else [
            _modes_needed(db.sides[l], s_min, tol, cap if d == 2 else int(math.sqrt(cap) * 8))
            for l in range(d) if l != axis]
        others = [l for l in range(d) if l != axis]
        modes = _mode_grid(K)
        prod = np.ones((Xs.shape[0], Z.shape[0], modes.shape[0]))
        lam = np.zeros(modes.shape[0])
        for c, l in enumerate(others):
            Ll = db.sides[l]
            w = modes[:, c] * math.pi / Ll
            sx = np.sin(np.outer(Xs[:, l] - db.lower[l], w))
            sz = np.sin(np.outer(Z[:, l] - db.lower[l], w))
            prod *= (2.0 / Ll) * sx[:, None, :] * sz[None, :, :]
            lam += w * w
    kappa = np.sqrt(db.m**2 + lam)
    arg = xi if side == 1 else (L - xi)
    ratio = _sinh_ratio(kappa[None, :], arg[:, None], L)  # (M, modes)
    out[ok] = 2.0 * np.einsum("mpk,mk->mp", prod, ratio)
    return np.abs(out)


def normal_derivative(db: DirichletBox, x, z) -> float:
    """Magnitude of the normal derivative of ``G_A^D(x, .)`` at boundary point z."""
    x = as_point(x, db.d)
    z = as_point(z, db.d)
    if not db.box.contains(x):
        raise ParameterError("x must be strictly inside the box")
    face = _face_of(db.box, z)
    return float(normal_derivative_many(db, x[None, :], face, z[None, :])[0, 0])


@dataclass(frozen=True)
class FaceRule:
    axis: int
    side: int
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class BoundaryQuadrature:
    """Tensor Gauss-Legendre rule on each face of a box, optionally clipped.

    ``clip`` restricts every face to its intersection with another box;
    faces that miss the open clip box are dropped.
    """

    box: Box
    order: int = 16
    panels: int = 4
    clip: Optional[Box] = None

    def faces(self) -> list:
        out = []
        t, w = np.polynomial.legendre.leggauss(self.order)
        for axis, side, coord in self.box.faces():
            lo = self.box.lower.copy()
            hi = self.box.upper.copy()
            if self.clip is not None:
                if not self.clip.lower[axis] < coord < self.clip.upper[axis]:
                    continue
                lo = np.maximum(lo, self.clip.lower)
                hi = np.minimum(hi, self.clip.upper)
                if any(lo[l] >= hi[l] for l in range(self.box.d) if l != axis):
                    continue
            nodes_1d, w_1d = [], []
            for l in range(self.box.d):
                if l == axis:
                    continue
                edges = np.linspace(lo[l], hi[l], self.panels + 1)
                half = 0.5 * np.diff(edges)
                mid = 0.5 * (edges[1:] + edges[:-1])
                nodes_1d.append((mid[:, None] + half[:, None] * t[None, :]).ravel())
                w_1d.append((half[:, None] * w[None, :]).ravel())
            if nodes_1d:
                grids = np.meshgrid(*nodes_1d, indexing="ij")
                wgrid = np.meshgrid(*w_1d, indexing="ij")
                pts = np.zeros((grids[0].size, self.box.d))
                cols = [l for l in range(self.box.d) if l != axis]
                for c, l in enumerate(cols):
                    pts[:, l] = grids[c].ravel()
                weights = np.prod([g.ravel() for g in wgrid], axis=0)
            else:
                pts = np.zeros((1, self.box.d))
                weights = np.ones(1)
            pts[:, axis] = coord
            out.append(FaceRule(axis, side, pts, weights))
        return out


@lru_cache(maxsize=200000)
def _G_cached(d: int, m: float, r: float) -> float:
    return continuum_G(ModelParams(d, m, 1.0), r).value


def _continuum_many(d: int, m: float, Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    r = np.linalg.norm(Z - y, axis=1)
    return np.array([_G_cached(d, m, float(v)) for v in r])


def first_exit_density(db: DirichletBox, x, y, z) -> float:
    """Density of the first boundary hit at z, times the propagator onward to y.

    Integrates over the boundary to ``hit_boundary_measure(db, x, y)``.
    """
    x = as_point(x, db.d)
    y = as_point(y, db.d)
    z = as_point(z, db.d)
    return 0.5 * normal_derivative(db, x, z) * _G_cached(db.d, db.m, float(np.linalg.norm(z - y)))


def _hit(db: DirichletBox, x, y, order: int, panels: int) -> float:
    total = 0.0
    for rule in BoundaryQuadrature(db.box, order, panels).faces():
        dn = normal_derivative_many(db, x[None, :], (rule.axis, rule.side), rule.nodes)[0]
        total += float(np.sum(rule.weights * 0.5 * dn * _continuum_many(db.d, db.m, rule.nodes, y)))
    return total


def hit_boundary_measure(db: DirichletBox, x, y, order: int = 16, panels: int = 4,
                         tol: float = 1e-8, full_output: bool = False):
    """Mass of the paths from x to y that reach the boundary of the box.

    Integrates the first-exit density against the free propagator, face by
    face, refining the panels until two successive values agree to ``tol``.
    """
    x = as_point(x, db.d)
    y = as_point(y, db.d)
    if not db.box.contains(x):
        raise ParameterError("x must be strictly inside the box")
    if db.box.contains(y, closed=True):
        raise ParameterError("y must lie outside the closed box")
    prev = _hit(db, x, y, order, panels)
    for _ in range(6):
        panels *= 2
        cur = _hit(db, x, y, order, panels)
        err = abs(cur - prev)
        if err <= tol * max(abs(cur), 1e-300):
            return (cur, err) if full_output else cur
        prev = cur
    raise ConvergenceError(f"boundary quadrature did not reach relative tolerance {tol}")


# ---------------------------------------------------------------------------
# nested cylinder measure


def _check_boundaries(boxes: Sequence[Box]):
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            A, B = boxes[i], boxes[j]
            for axis, _, ca in A.faces():
                for axis2, _, cb in B.faces():
                    if axis != axis2 or ca != cb:
                        continue
                    if all(max(A.lower[l], B.lower[l]) < min(A.upper[l], B.upper[l])
                           for l in range(A.d) if l != axis):
                        raise ParameterError(f"boundaries of regions {i + 1} and {j + 1} overlap in a face")


def _nested_value(boxes, m: float, x, y, order: int, panels: int, faces=None) -> float:
    n = len(boxes)
    dbs = [DirichletBox(b, m) for b in boxes]
    rules = []
    for i in range(n - 1):
        fr = BoundaryQuadrature(boxes[i], order, panels, clip=boxes[i + 1]).faces()
        if i == 0 and faces is not None:
            fr = [r for r in fr if (r.axis, r.side) in faces]
        rules.append(fr)
    # backward recursion: F_{n}(z) = G^D_{A_n}(z, y); F_i(z) = int 1/2 |dG^D_{A_i}/dn|(z, w) F_{i+1}(w) dS(w)
    nodes = [np.concatenate([r.nodes for r in fr]) if fr else np.zeros((0, boxes[0].d)) for fr in rules]
    F = green_box_many(dbs[-1], nodes[-1], y)[0] if n > 1 else None
    for i in range(n - 2, -1, -1):
        src = np.atleast_2d(x) if i == 0 else nodes[i - 1]
        acc = np.zeros(src.shape[0])
        offset = 0
        for r in rules[i]:
            k = r.nodes.shape[0]
            if src.shape[0]:
                dn = normal_derivative_many(dbs[i], src, (r.axis, r.side), r.nodes)
                acc += 0.5 * dn @ (r.weights * F[offset:offset + k])
            offset += k
        F = acc
    return float(F[0])


def nested_measure(boxes: Sequence[Box], m: float, x, y, order: int = 16, panels: int = 2,
                   tol: float = 1e-7, faces=None, full_output: bool = False):
    """Continuum measure of the cylinder set of a chain of boxes.

    Iterated face quadrature over the boundaries ``dA_1, ..., dA_{n-1}``; each
    face is clipped to the next box, where the zero extension of the next
    Green function would otherwise kill the integrand.  ``faces`` limits the
    outermost integral to a subset of ``(axis, side)`` faces of ``A_1``.
    Panels are doubled until two successive values agree to ``tol``.
    """
    boxes = list(getattr(boxes, "regions", boxes))
    if not boxes or not all(isinstance(b, Box) for b in boxes):
        raise ParameterError("nested_measure needs a chain of boxes")
    d = boxes[0].d
    x = as_point(x, d)
    y = as_point(y, d)
    if not boxes[0].contains(x) or not boxes[-1].contains(y):
        raise ParameterError("x must lie in the first box and y in the last")
    _check_boundaries(boxes)
    if len(boxes) == 1:
        res = green_box(DirichletBox(boxes[0], m), x, y, full_output=True)
        return (res.value, res.error) if full_output else res.value
    if d == 1:
        val = _nested_value(boxes, m, x, y, 1, 1, faces)
        return (val, 0.0) if full_output else val
    prev = _nested_value(boxes, m, x, y, order, panels, faces)
    for _ in range(5):
        panels *= 2
        cur = _nested_value(boxes, m, x, y, order, panels, faces)
        err = abs(cur - prev)
        if err <= tol * max(abs(cur), 1e-300):
            return (cur, err) if full_output else cur
        prev = cur
    raise ConvergenceError(f"nested quadrature did not reach relative tolerance {tol}")
