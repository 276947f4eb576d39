import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from unpath.core import Box, ModelParams, ParameterError, RandomStream
from unpath.dirichlet import (BoundaryQuadrature, DirichletBox, dirichlet_heat_kernel_1d, first_exit_density,
                              green_box, hit_boundary_measure, nested_measure, normal_derivative)
from unpath.propagators import continuum_G
from unpath.sampler import EnsembleSpec, draw_ensemble, mc_volume

UNIT = Box([0.0], [1.0])


def ode_1d(m, L, x, y):
    lo, hi = min(x, y), max(x, y)
    return 2 * math.sinh(m * lo) * math.sinh(m * (L - hi)) / (m * math.sinh(m * L))


class TestGreen:
    def test_massless_limit(self):
        assert green_box(DirichletBox(UNIT, 1e-6), [0.5], [0.5]) == pytest.approx(0.5, abs=1e-9)

    @pytest.mark.parametrize("method", ["resolvent", "eigen", "images"])
    @pytest.mark.parametrize("x,y", [(0.3, 0.7), (0.9, 0.2), (1.1, 1.1)])
    def test_ode_closed_form(self, method, x, y):
        L, m = 2.3, 1.4
        db = DirichletBox(Box([0.0], [L]), m)
        assert green_box(db, [x], [y], method) == pytest.approx(ode_1d(m, L, x, y), abs=1e-8)

    @pytest.mark.parametrize("d", [2, 3])
    def test_images_agree(self, d):
        box = Box(np.zeros(d), [1.0, 1.3, 0.8][:d])
        db = DirichletBox(box, 1.0)
        x = np.array([0.3, 0.5, 0.4][:d])
        y = np.array([0.6, 0.9, 0.3][:d])
        assert green_box(db, x, y) == pytest.approx(green_box(db, x, y, "images"), abs=1e-6)

    def test_eigen_2d(self):
        db = DirichletBox(Box([0.0, 0.0], [1.0, 1.0]), 1.0)
        a = green_box(db, [0.3, 0.4], [0.7, 0.6])
        b = green_box(db, [0.3, 0.4], [0.7, 0.6], "eigen")
        assert a == pytest.approx(b, abs=1e-6)

    def test_zero_outside(self):
        db = DirichletBox(UNIT, 1.0)
        assert green_box(db, [1.0], [0.5]) == 0.0
        res = green_box(db, [1.5], [0.5], full_output=True)
        assert res.value == 0.0 and not res.inside

    def test_coincident_points(self):
        db = DirichletBox(Box([0.0, 0.0], [1.0, 1.0]), 1.0)
        with pytest.raises(ParameterError):
            green_box(db, [0.5, 0.5], [0.5, 0.5])

    def test_bounded_by_free(self):
        db = DirichletBox(Box([0.0, 0.0], [1.0, 1.0]), 1.0)
        free = continuum_G(ModelParams(2, 1.0, 0.1), math.hypot(0.4, 0.2)).value
        assert 0 < green_box(db, [0.3, 0.4], [0.7, 0.6]) < free

    def test_bad_params(self):
        with pytest.raises(ParameterError):
            DirichletBox(UNIT, 0.0)
        with pytest.raises(ParameterError):
            DirichletBox(Box([0.0], [1.0]), 1.0, K=0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.floats(0.1, 3.0))
    def test_symmetric(self, x, y, m):
        db = DirichletBox(UNIT, m)
        assert green_box(db, [x], [y]) == pytest.approx(green_box(db, [y], [x]), rel=1e-10)

    def test_heat_kernel_survival(self):
        # mass left in (0, 1) at time t, against the sine-series survival probability
        t = 0.1
        tot, _ = integrate.quad(lambda v: dirichlet_heat_kernel_1d(t, 0.5, v, 1.0), 0, 1, epsabs=1e-13)
        n = np.arange(1, 200, 2)
        ref = np.sum(4 / (n * math.pi) * np.sin(n * math.pi / 2) * np.exp(-(n * math.pi) ** 2 * t / 2))
        assert tot == pytest.approx(ref, abs=1e-10)


class TestNormalDerivative:
    def test_massless(self):
        db = DirichletBox(UNIT, 1e-6)
        assert normal_derivative(db, [0.5], [1.0]) == pytest.approx(1.0, abs=1e-9)

    def test_centre_symmetry(self):
        db = DirichletBox(Box([0.0, 0.0], [2.0, 1.0]), 1.0)
        x = [1.0, 0.5]
        assert normal_derivative(db, x, [0.0, 0.3]) == pytest.approx(normal_derivative(db, x, [2.0, 0.3]))
        assert normal_derivative(db, x, [0.6, 0.0]) == pytest.approx(normal_derivative(db, x, [0.6, 1.0]))

    @pytest.mark.parametrize("m", [1e-6, 0.5, 2.0])
    def test_exit_mass(self, m):
        db = DirichletBox(UNIT, m)
        tot = 0.5 * (normal_derivative(db, [0.3], [0.0]) + normal_derivative(db, [0.3], [1.0]))
        # exit probability before killing at rate m^2/2, from the 1-d ODE
        ref = (math.cosh(m * (0.3 - 0.5))) / math.cosh(m * 0.5)
        assert tot == pytest.approx(ref, abs=1e-9)
        assert tot <= 1 + 1e-12

    def test_exit_side_frequencies(self):
        # a massless walk started at 0.3 in (0, 1) leaves through 1 with probability 0.3
        db = DirichletBox(UNIT, 1e-6)
        p_right = 0.5 * normal_derivative(db, [0.3], [1.0])
        rng = RandomStream(1).rng
        n = 20_000
        right = 0
        for _ in range(n):
            pos = 6
            while 0 < pos < 20:
                pos += 1 if rng.random() < 0.5 else -1
            right += pos == 20
        assert abs(right / n - p_right) <= 3 * math.sqrt(p_right * (1 - p_right) / n)

    def test_edge_rejected(self):
        db = DirichletBox(Box([0.0, 0.0], [1.0, 1.0]), 1.0)
        with pytest.raises(ParameterError):
            normal_derivative(db, [0.5, 0.5], [1.0, 1.0])
        with pytest.raises(ParameterError):
            normal_derivative(db, [0.5, 0.5], [0.5, 0.5])


class TestHitting:
    def test_1d(self):
        db = DirichletBox(UNIT, 1.0)
        assert hit_boundary_measure(db, [0.5], [2.0]) == pytest.approx(math.exp(-1.5), abs=1e-4)

    @pytest.mark.parametrize("s", [0.4, 0.1])
    def test_any_box_gives_propagator(self, s):
        db = DirichletBox(Box([0.5 - s, 0.5 - s], [0.5 + s, 0.5 + s]), 1.0)
        G = continuum_G(ModelParams(2, 1.0, 0.1), 1.0).value
        assert hit_boundary_measure(db, [0.5, 0.5], [1.5, 0.5]) == pytest.approx(G, rel=1e-6)

    def test_2d_against_lattice_mc(self):
        db = DirichletBox(Box([0.0, 0.0], [1.0, 1.0]), 1.0)
        spec = EnsembleSpec(ModelParams(2, 1.0, 0.05), [0.5, 0.5], "lat_bridge", 1_000_000,
                            RandomStream(2), [2.0, 0.5])
        est = mc_volume(spec)
        hit = hit_boundary_measure(db, [0.5, 0.5], [2.0, 0.5])
        # every path to an outside point reaches the boundary
        assert abs(2 * est.value - hit) <= 3 * 2 * est.stderr

    def test_y_inside_rejected(self):
        with pytest.raises(ParameterError):
            hit_boundary_measure(DirichletBox(UNIT, 1.0), [0.5], [0.7])


class TestFirstExit:
    def test_normalisation_by_independent_quadrature(self):
        db = DirichletBox(Box([0.0, 0.0], [1.0, 0.8]), 1.0)
        x, y = [0.3, 0.4], [1.6, 0.1]
        total = 0.0
        for axis, side, coord in db.box.faces():
            other = 1 - axis
            lo, hi = db.box.lower[other], db.box.upper[other]

            def f(s):
                z = np.empty(2)
                z[axis] = coord
                z[other] = s
                return first_exit_density(db, x, y, z)

            total += integrate.quad(f, lo, hi, limit=200, epsabs=1e-12)[0]
        assert total / hit_boundary_measure(db, x, y) == pytest.approx(1.0, abs=1e-6)

    def test_symmetry(self):
        db = DirichletBox(Box([0.0, 0.0], [1.0, 1.0]), 1.0)
        x, y = [0.5, 0.5], [0.5, 2.0]
        assert first_exit_density(db, x, y, [0.3, 1.0]) == pytest.approx(first_exit_density(db, x, y, [0.7, 1.0]))

    def test_1d_exit_side_against_bridges(self):
        # weighted fraction of lattice bridges to y = 1.5 whose first exit is through 1
        db = DirichletBox(UNIT, 1.0)
        x, y, a = 0.3, 1.5, 0.025
        f0 = first_exit_density(db, [x], [y], [0.0])
        f1 = first_exit_density(db, [x], [y], [1.0])
        ref = f1 / (f0 + f1)
        spec = EnsembleSpec(ModelParams(1, 1.0, a), [x], "lat_bridge", 100_000, RandomStream(3), [y])
        samples, n = draw_ensemble(spec)
        w = np.zeros(n)
        hit = np.zeros(n)
        lo, hi = round(-x / a), round((1 - x) / a)
        for j, s in enumerate(samples):
            v = s.path.integer_vertices()[:, 0]
            out = np.nonzero((v <= lo) | (v >= hi))[0][0]
            w[j] = s.weight
            hit[j] = v[out] >= hi
        r = np.sum(w * hit) / np.sum(w)
        # delta-method standard error of a ratio estimator
        se = math.sqrt(np.sum((w * (hit - r)) ** 2)) / np.sum(w)
        assert abs(r - ref) <= 3 * se


class TestNested:
    def test_single_box(self):
        assert nested_measure([UNIT], 1.0, [0.3], [0.7]) == pytest.approx(ode_1d(1.0, 1.0, 0.3, 0.7), abs=1e-9)

    def test_single_box_2d(self):
        box = Box([0.0, 0.0], [1.0, 1.0])
        v = nested_measure([box], 1.0, [0.3, 0.4], [0.7, 0.6])
        assert v == pytest.approx(green_box(DirichletBox(box, 1.0), [0.3, 0.4], [0.7, 0.6]), abs=1e-6)

    def test_1d_product(self):
        # one interior crossing point: first passage to 0.6 inside A_1, then A_2 onward
        m = 1.0
        A1, A2 = Box([0.0], [0.6]), Box([0.4], [1.0])
        v = nested_measure([A1, A2], m, [0.3], [0.7])
        dn = 0.5 * 2 * math.sinh(m * 0.3) / math.sinh(m * 0.6)
        ref = dn * ode_1d(m, 0.6, 0.6 - 0.4, 0.7 - 0.4)
        assert v == pytest.approx(ref, rel=1e-9)

    def test_containing_second_box(self):
        # A_2 contains the closure of A_1: the chain is every path that ends in A_2
        A1 = Box([0.2, 0.2], [0.6, 0.7])
        A2 = Box([0.0, 0.0], [1.0, 1.0])
        x, y = [0.4, 0.4], [0.8, 0.5]
        v = nested_measure([A1, A2], 1.0, x, y)
        assert v == pytest.approx(green_box(DirichletBox(A2, 1.0), x, y), rel=1e-6)

    def test_face_additivity(self):
        A1 = Box([0.2, 0.2], [0.6, 0.7])
        A2 = Box([0.0, 0.0], [1.0, 1.0])
        x, y = [0.4, 0.4], [0.8, 0.5]
        whole = nested_measure([A1, A2], 1.0, x, y)
        part1 = nested_measure([A1, A2], 1.0, x, y, faces=[(0, 0), (0, 1)])
        part2 = nested_measure([A1, A2], 1.0, x, y, faces=[(1, 0), (1, 1)])
        assert part1 + part2 == pytest.approx(whole, rel=1e-6)

    def test_endpoint_checks(self):
        with pytest.raises(ParameterError):
            nested_measure([UNIT], 1.0, [1.3], [0.5])

    def test_quadrature_faces(self):
        q = BoundaryQuadrature(Box([0.0, 0.0], [1.0, 2.0]), order=8, panels=2)
        total = sum(float(np.sum(r.weights)) for r in q.faces())
        assert total == pytest.approx(6.0)
