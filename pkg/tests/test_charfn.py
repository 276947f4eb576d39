import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unpath.charfn import (CFSpec, cf_empirical, cf_lat_discrete, cf_pl_bridge_discrete, cf_pl_discrete,
                           cf_wiener_onepoint, cf_wiener_twopoint, lat_conditional_cf, limit_cf,
                           limit_cf_closed_form, pl_bridge_volume, pl_conditional_cf, snap_factor,
                           weak_convergence_report)
from unpath.core import LatticePath, ModelParams, ParameterError, PLPath, RandomStream
from unpath.experiments import default_battery
from unpath.propagators import continuum_G, heat_kernel
from unpath.sampler import EnsembleSpec, WeightedSample, draw_ensemble

P1 = ModelParams(1, 1.0, 0.1)


def within(est, ref, se, k=3.0):
    return abs(est - ref) <= k * se


class TestSpec:
    def test_validation(self):
        with pytest.raises(ParameterError):
            CFSpec([0.5, 0.5], [1.0, 1.0])
        with pytest.raises(ParameterError):
            CFSpec([0.0], [1.0])
        with pytest.raises(ParameterError):
            CFSpec([0.5, 1.2], [1.0, 1.0])
        with pytest.raises(ParameterError):
            CFSpec([0.5], [[1.0], [2.0]])

    def test_dimension_mismatch(self):
        with pytest.raises(ParameterError):
            cf_wiener_onepoint(P1, 1.0, CFSpec([1.0], [[1.0, 2.0]]), [0.0])


class TestWiener:
    @pytest.mark.parametrize("xi", [0.0, 0.7, 2.0])
    def test_standard_gaussian(self, xi):
        v = cf_wiener_onepoint(P1, 1.0, CFSpec([1.0], [xi]), [0.0]).value
        assert v == pytest.approx(math.exp(-xi**2 / 2))

    def test_zero_frequencies(self):
        spec = CFSpec([0.2, 0.6, 1.0], [0.0, 0.0, 0.0])
        assert cf_wiener_onepoint(P1, 2.5, spec, [0.4]).value == pytest.approx(1.0)

    def test_two_times_against_increments(self):
        xi = 1.3
        spec = CFSpec([0.5, 1.0], [xi, -xi])
        v = cf_wiener_onepoint(P1, 1.0, spec, [0.0]).value
        assert v == pytest.approx(math.exp(-xi**2 / 4))
        # Brownian increments as an independent route
        rng = RandomStream(1).rng
        n = 200_000
        w1 = rng.normal(0, math.sqrt(0.5), n)
        w2 = w1 + rng.normal(0, math.sqrt(0.5), n)
        z = np.exp(1j * xi * (w1 - w2))
        assert within(z.real.mean(), v.real, z.real.std() / math.sqrt(n))

    def test_bridge_volume(self):
        spec = CFSpec([0.4], [0.0])
        v = cf_wiener_twopoint(P1, 1.7, spec, [0.1], [0.9]).value
        assert v == pytest.approx(heat_kernel(P1, 1.7, 0.8))

    def test_bridge_pinned_end(self):
        xi = 0.8
        v = cf_wiener_twopoint(P1, 1.2, CFSpec([1.0], [xi]), [0.1], [0.9]).value
        assert v == pytest.approx(heat_kernel(P1, 1.2, 0.8) * np.exp(1j * xi * 0.9))

    def test_bridge_midpoint(self):
        xi = 1.5
        v = cf_wiener_twopoint(P1, 1.0, CFSpec([0.5], [xi]), [0.0], [0.0]).value
        assert v == pytest.approx((2 * math.pi) ** -0.5 * math.exp(-xi**2 / 8))


class TestLimit:
    @pytest.mark.parametrize("spec", default_battery(1))
    def test_quadrature_matches_closed_form(self, spec):
        a = limit_cf(P1, spec, [0.2]).value
        b = limit_cf_closed_form(P1, spec, [0.2])
        assert abs(a - b) < 1e-9

    def test_one_time_value(self):
        assert limit_cf(P1, CFSpec([1.0], [1.0]), [0.0]).value == pytest.approx(0.5)

    def test_two_endpoint_total_mass(self):
        # normalised two-endpoint limit has unit mass
        v = limit_cf(P1, CFSpec([0.5], [0.0]), [0.0], [1.0]).value
        assert v == pytest.approx(1.0, abs=1e-8)


class TestPiecewiseLinear:
    def test_normalisation(self):
        spec = CFSpec([0.3, 1.0], [0.0, 0.0])
        assert cf_pl_discrete(P1, spec, [0.2]).value == pytest.approx(1.0, abs=1e-12)

    def test_close_to_limit(self):
        p = ModelParams(1, 1.0, 0.05)
        assert abs(cf_pl_discrete(p, CFSpec([1.0], [1.0]), [0.0]).value - 0.5) < 0.01 * 0.5

    def test_snap_factor_tends_to_one(self):
        spec = CFSpec([0.3, 0.7], [1.0, -0.5])
        # proper time a^2 N held at 1 while the grid refines
        dev = np.array([abs(snap_factor(ModelParams(1, 1.0, N**-0.5), spec, [N])[0] - 1)
                        for N in (7, 71, 701, 7001)])
        assert np.all(np.diff(dev) < 0)
        assert dev[-1] < 1e-3

    def test_modes_agree_on_grid_times(self):
        spec = CFSpec([0.25, 0.5, 1.0], [0.3, -0.2, 0.9])
        Ns = np.array([4, 8, 12, 40])
        a = pl_conditional_cf(P1, spec, [0.1], Ns, "exact")
        b = pl_conditional_cf(P1, spec, [0.1], Ns, "snapped")
        np.testing.assert_allclose(a, b, rtol=1e-12)

    def test_volume_variable(self):
        # with xi = 0 only the volume enters: a geometric series in e^{i s a^2}
        s = 0.7
        q = P1.q_pl
        v = cf_pl_discrete(P1, CFSpec([1.0], [0.0], s), [0.0]).value
        ref = (1 - q) / (1 - q * np.exp(1j * s * P1.a**2))
        assert abs(v - ref) < 1e-12

    def test_against_sampler(self):
        p = ModelParams(1, 1.0, 0.3)
        spec = CFSpec([0.4, 1.0], [1.2, -0.5], 0.4)
        ens = EnsembleSpec(p, [0.2], "pl_free", 100_000, RandomStream(2))
        samples, n = draw_ensemble(ens)
        est = cf_empirical(samples, spec, n_draws=n)
        ref = cf_pl_discrete(p, spec, [0.2]).value
        assert within(est.value.real, ref.real, est.stderr[0])
        assert within(est.value.imag, ref.imag, est.stderr[1])


class TestLattice:
    def test_normalisation(self):
        assert cf_lat_discrete(P1, CFSpec([0.5, 1.0], [0.0, 0.0]), [0.3]).value == pytest.approx(1.0)

    @pytest.mark.parametrize("N", [1, 5, 17])
    def test_single_term(self, N):
        xi = 1.4
        v = lat_conditional_cf(P1, CFSpec([1.0], [xi]), [0.0], [N])[0]
        assert v == pytest.approx(math.cos(P1.a * xi) ** N)

    def test_close_to_limit(self):
        p = ModelParams(1, 1.0, 0.05)
        assert abs(cf_lat_discrete(p, CFSpec([1.0], [1.0]), [0.0]).value - 0.5) < 0.01 * 0.5

    def test_rejects_volume_variable(self):
        with pytest.raises(ParameterError):
            cf_lat_discrete(P1, CFSpec([1.0], [1.0], 0.3), [0.0])

    def test_exact_mode_against_enumeration(self):
        # interpolated CF of all 2^N walks, averaged by brute force
        import itertools
        p = ModelParams(1, 1.0, 0.3)
        spec = CFSpec([0.3, 0.75], [0.9, -0.4])
        N = 6
        acc = 0
        for steps in itertools.product((1, -1), repeat=N):
            path = LatticePath([0.1], list(steps), p.a)
            acc += cf_empirical([WeightedSample(path)], spec).value
        ref = acc / 2**N
        assert lat_conditional_cf(p, spec, [0.1], [N], "exact")[0] == pytest.approx(ref, abs=1e-12)

    def test_against_sampler(self):
        p = ModelParams(2, 1.0, 0.3)
        spec = CFSpec([0.5, 1.0], [[0.8, 0.2], [-0.3, 0.6]])
        ens = EnsembleSpec(p, [0.0, 0.0], "lat_free", 100_000, RandomStream(3))
        samples, n = draw_ensemble(ens)
        est = cf_empirical(samples, spec, n_draws=n)
        ref = cf_lat_discrete(p, spec, [0.0, 0.0], mode="exact").value
        assert within(est.value.real, ref.real, est.stderr[0])
        assert within(est.value.imag, ref.imag, est.stderr[1])


class TestEmpirical:
    def test_constant_paths(self):
        samples = [WeightedSample(PLPath(0.0, [[0.4]]))] * 10
        spec = CFSpec([0.2, 1.0], [0.5, 1.5])
        v = cf_empirical(samples, spec)
        assert v.value == pytest.approx(np.exp(1j * 0.4 * 2.0))
        assert max(v.stderr) <= 1e-15

    def test_empty(self):
        with pytest.raises(ParameterError):
            cf_empirical([], CFSpec([1.0], [1.0]))

    def test_bridge_volume(self):
        p = ModelParams(1, 1.0, 0.2)
        ens = EnsembleSpec(p, [0.0], "pl_bridge", 100_000, RandomStream(4), [1.0])
        samples, n = draw_ensemble(ens)
        est = cf_empirical(samples, CFSpec([1.0], [0.0]), n_draws=n)
        assert within(est.value.real, pl_bridge_volume(p, [0.0], [1.0]), est.stderr[0])


class TestBridge:
    def test_normalised_mass(self):
        v = cf_pl_bridge_discrete(P1, CFSpec([0.5], [0.0]), [0.0], [1.0]).value
        assert v == pytest.approx(1.0)

    def test_against_sampler(self):
        p = ModelParams(1, 1.0, 0.2)
        spec = CFSpec([0.3, 0.8], [1.0, 0.6])
        ens = EnsembleSpec(p, [0.0], "pl_bridge", 100_000, RandomStream(5), [1.0])
        samples, n = draw_ensemble(ens)
        est = cf_empirical(samples, spec, n_draws=n)
        ref = cf_pl_bridge_discrete(p, spec, [0.0], [1.0], normalized=False).value
        assert within(est.value.real, ref.real, est.stderr[0])
        assert within(est.value.imag, ref.imag, est.stderr[1])

    def test_volume_tends_to_propagator(self):
        lim = 0.5 * continuum_G(P1, 1.0).value
        errs = [abs(pl_bridge_volume(ModelParams(1, 1.0, a), [0.0], [1.0]) - lim) for a in (0.2, 0.1, 0.05)]
        assert errs[0] > errs[1] > errs[2]


class TestReport:
    def test_columns_and_monotone(self):
        rep = weak_convergence_report(P1.with_spacing(0.2), [0.2, 0.1], default_battery(1)[:3], [0.2], "pl")
        assert len(rep.rows) == 6
        assert rep.all_monotone
        assert set(rep.rows[0]) >= {"a", "spec_id", "abs_error", "rel_error"}

    def test_bridge_report_has_volume_row(self):
        rep = weak_convergence_report(P1, [0.2, 0.1], default_battery(1)[:2], [0.0], "pl_bridge", [1.0])
        assert {r["spec_id"] for r in rep.rows} == {"0", "1", "volume"}
        assert rep.all_monotone

    def test_increasing_a_rejected(self):
        with pytest.raises(ParameterError):
            weak_convergence_report(P1, [0.1, 0.2], default_battery(1), [0.0])

    def test_lattice_ignores_volume_variable(self):
        battery = [CFSpec([1.0], [0.5], 0.3)]
        rep = weak_convergence_report(P1, [0.2, 0.1], battery, [0.2], "lat")
        assert rep.rows[-1]["rel_error"] < 0.01


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=3), st.floats(0.05, 0.5))
def test_cf_bounded_by_one(xis, a):
    times = np.linspace(1 / len(xis), 1, len(xis))
    spec = CFSpec(times, xis)
    p = ModelParams(1, 1.0, a)
    assert abs(cf_pl_discrete(p, spec, [0.3]).value) <= 1 + 1e-12
    assert abs(cf_lat_discrete(p, spec, [0.3]).value) <= 1 + 1e-12
