import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from unpath.core import (Ball, Box, LatticePath, ModelParams, ParameterError, PLPath, RandomStream,
                         modulus_of_continuity, pl_eval, pl_eval_many, run_chunks)


class TestParams:
    def test_accepts_valid(self):
        p = ModelParams(1, 1.0, 0.1)
        assert (p.d, p.m, p.a) == (1, 1.0, 0.1)

    def test_zero_mass(self):
        with pytest.raises(ParameterError, match="mass must be positive"):
            ModelParams(3, 0.0, 0.1)

    def test_negative_spacing(self):
        with pytest.raises(ParameterError):
            ModelParams(2, 1.0, -0.5)

    @pytest.mark.parametrize("d", [0, 1.5, True])
    def test_bad_dimension(self, d):
        with pytest.raises(ParameterError):
            ModelParams(d, 1.0, 0.1)

    def test_geometric_weights(self):
        p = ModelParams(2, 1.0, 0.1)
        assert p.q_pl == pytest.approx(math.exp(-0.005))
        assert p.q_lat == pytest.approx(math.exp(-0.0025))


class TestPaths:
    def test_single_step_midpoint(self):
        assert pl_eval(PLPath(1.0, [[0.0], [1.0]]), 0.5)[0] == 0.5

    def test_start_point(self):
        path = PLPath(2.0, [[0.3, 0.1], [1.0, 2.0], [5.0, -1.0]])
        np.testing.assert_array_equal(pl_eval(path, 0.0), [0.3, 0.1])

    def test_second_segment(self):
        assert pl_eval(PLPath(2.0, [[0.0], [1.0], [0.0]]), 0.75)[0] == pytest.approx(0.5)

    def test_constant_path(self):
        path = PLPath(0.0, [[0.4]])
        assert pl_eval(path, 0.7)[0] == 0.4
        assert modulus_of_continuity(path, 0.3) == 0.0

    def test_constant_requires_zero_volume(self):
        with pytest.raises(ParameterError):
            PLPath(1.0, [[0.4]])

    def test_straight_modulus(self):
        assert modulus_of_continuity(PLPath(1.0, [[0.0], [1.0]]), 0.25) == pytest.approx(0.25)

    def test_zigzag_modulus_matches_grid(self):
        path = PLPath(2.0, [[0.0], [1.0], [0.0]])
        ts = np.linspace(0, 1, 2001)
        w = pl_eval_many(path, ts)[:, 0]
        grid = max(np.max(np.abs(w[j:] - w[: len(w) - j])) for j in range(0, int(0.6 * 2000) + 1))
        assert modulus_of_continuity(path, 0.6) == pytest.approx(grid, abs=1e-9)
        assert modulus_of_continuity(path, 0.6) == pytest.approx(1.0)

    def test_lattice_path_vertices(self):
        lp = LatticePath([0.0, 0.0], [1, 2, -1], 0.5)
        np.testing.assert_allclose(lp.vertices, [[0, 0], [0.5, 0], [0.5, 0.5], [0, 0.5]])
        assert LatticePath.from_vertices(lp.vertices, 0.5).steps.tolist() == [1, 2, -1]

    def test_bad_step_code(self):
        with pytest.raises(ParameterError):
            LatticePath([0.0], [2], 0.1)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.floats(0, 1))
    def test_eval_stays_in_hull(self, vals, t):
        path = PLPath(1.0, np.array(vals)[:, None])
        v = pl_eval(path, t)[0]
        assert min(vals) - 1e-12 <= v <= max(vals) + 1e-12


class TestRegions:
    def test_box_open_and_closed(self):
        b = Box([0.0, 0.0], [1.0, 2.0])
        assert b.contains([0.5, 1.0])
        assert not b.contains([1.0, 1.0])
        assert b.contains([1.0, 1.0], closed=True)

    def test_box_signed_distance(self):
        b = Box([0.0], [1.0])
        assert b.signed_distance([0.25]) == pytest.approx(-0.25)
        assert b.signed_distance([1.5]) == pytest.approx(0.5)

    def test_ball_exit(self):
        ball = Ball([0.0, 0.0], 1.0)
        u = ball.exit_parameter([0.0, 0.0], [2.0, 0.0])
        assert u == pytest.approx(0.5)

    def test_box_exit_open_vs_closed(self):
        b = Box([0.0], [1.0])
        # a segment ending exactly on the boundary leaves the open box but not the closed one
        assert b.exit_parameter([0.5], [1.0]) == pytest.approx(1.0)
        assert b.exit_parameter([0.5], [1.0], closed=True) is None

    def test_faces(self):
        assert len(list(Box([0, 0, 0], [1, 1, 1]).faces())) == 6

    def test_degenerate_box(self):
        with pytest.raises(ParameterError):
            Box([0.0], [0.0])


class TestStreams:
    def test_reproducible(self):
        a = RandomStream(3).substream(2).rng.random(5)
        b = RandomStream(3).substream(2).rng.random(5)
        np.testing.assert_array_equal(a, b)

    def test_substreams_differ(self):
        s = RandomStream(3)
        assert s.substream(0).rng.random() != s.substream(1).rng.random()

    def test_parent_untouched(self):
        s = RandomStream(4)
        first = RandomStream(4).rng.random()
        s.substream(0).rng.random(10)
        assert s.rng.random() == first

    def test_chunks_independent_of_workers(self):
        fn = lambda st_, n: float(st_.rng.random(n).sum())
        one = run_chunks(RandomStream(1), 10_000, fn, chunk=1000, workers=1)
        four = run_chunks(RandomStream(1), 10_000, fn, chunk=1000, workers=4)
        assert one == four
        assert len(one) == 10

    def test_bad_seed(self):
        with pytest.raises(ParameterError):
            RandomStream(-1)
