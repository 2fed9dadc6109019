import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from oracles import brute_force_occupations
from pechukas_aqc.hamiltonian import HermitianMatrix, ProblemDefinition, initial_conditions_exact
from pechukas_aqc.pechukas import integrate
from pechukas_aqc.transitions import (
    AnticrossingEvent,
    SweepSpec,
    detect_anticrossings,
    locate_gap_minima,
    lz_probability,
    propagate_occupations,
    simulate_hopping,
    with_probabilities,
)


def two_level(g=0.1, z=1.0):
    # H(lam) = [[0.5, g], [g, z lam]]: minimum gap 2g at lam = 0.5 / z
    h0 = HermitianMatrix(np.array([[0.5, g], [g, 0.0]]))
    hb = HermitianMatrix(np.diag([0.0, 1.0]))
    return ProblemDefinition(h0, hb, z)


events_strategy = st.lists(
    st.tuples(st.integers(0, 3), st.floats(0.0, 1.0), st.floats(0.0, 1.0)), min_size=0, max_size=9
)


def make_events(raw):
    return [AnticrossingEvent(m, lam, 0.1, 1.0, p_lz=p) for m, lam, p in raw]


class TestLandauZener:
    def test_formula(self):
        sw = SweepSpec(50.0)
        p = lz_probability(0.3, 2.0, sw)
        assert p == pytest.approx(math.exp(-0.09 / (4 * math.pi * 2.0 / 50.0)), rel=1e-15)

    def test_unit_exponent(self):
        sw = SweepSpec(7.0, hbar=0.3)
        c = 0.8
        delta = math.sqrt(4 * math.pi * sw.hbar * c / sw.total_time)
        assert lz_probability(delta, c, sw) == pytest.approx(math.exp(-1.0), rel=1e-14)

    def test_doubling_time_squares_probability(self):
        p1 = lz_probability(0.2, 0.5, SweepSpec(10.0))
        p2 = lz_probability(0.2, 0.5, SweepSpec(20.0))
        assert p2 == pytest.approx(p1**2, rel=1e-13)

    def test_limits(self):
        sw = SweepSpec(10.0)
        assert lz_probability(0.0, 1.0, sw) == 1.0
        assert lz_probability(0.5, 0.0, sw) == 0.0

    @pytest.mark.parametrize("args", [(-0.1, 1.0), (0.1, -1.0)])
    def test_rejects_negative(self, args):
        with pytest.raises(ValueError):
            lz_probability(*args, SweepSpec(1.0))

    def test_sweep_validation(self):
        with pytest.raises(ValueError):
            SweepSpec(0.0)
        with pytest.raises(ValueError):
            SweepSpec(1.0, hbar=-1.0)

    @settings(max_examples=200)
    @given(st.floats(1e-3, 10), st.floats(1e-3, 10), st.floats(1e-2, 1e3), st.floats(1.01, 3))
    def test_monotone(self, delta, c, t, f):
        sw = SweepSpec(t)
        p = lz_probability(delta, c, sw)
        assert 0.0 <= p <= 1.0
        assert lz_probability(delta, c * f, sw) >= p  # stronger coupling
        assert lz_probability(delta, c, SweepSpec(t / f)) >= p  # faster sweep
        assert lz_probability(delta * f, c, sw) <= p  # larger gap


@pytest.fixture(scope="module")
def traj():
    p = two_level()
    return integrate(p, initial_conditions_exact(p))


class TestGapMinima:
    def test_two_level_event(self, traj):
        (e,) = locate_gap_minima(traj)
        assert e.pair == 0
        assert e.lambda_star == pytest.approx(0.5, abs=1e-10)
        assert e.delta_min == pytest.approx(0.2, rel=1e-9)
        # coupling |<1|Z Hb|2>| at the minimum: eigenvectors are (1, +-1)/sqrt2
        assert e.coupling == pytest.approx(0.5, rel=1e-6)
        assert not e.near_degenerate

    def test_probability_attached(self, traj):
        sw = SweepSpec(20.0)
        (e,) = detect_anticrossings(traj, sw)
        assert e.p_lz == pytest.approx(lz_probability(0.2, 0.5, sw), rel=1e-6)

    def test_no_minimum_without_anticrossing(self):
        p = ProblemDefinition(HermitianMatrix(np.diag([0.0, 1.0])), HermitianMatrix(np.diag([0.0, 1.0])))
        tr = integrate(p, initial_conditions_exact(p))
        assert locate_gap_minima(tr) == []


class TestPropagation:
    @settings(max_examples=100, deadline=None)
    @given(events_strategy)
    def test_doubly_stochastic(self, raw):
        occ = propagate_occupations(make_events(raw), 5)
        assert np.all(occ.p >= -1e-15)
        assert occ.column_defect() < 1e-12
        assert occ.row_defect() < 1e-12

    @settings(max_examples=60, deadline=None)
    @given(events_strategy)
    def test_matches_brute_force_markov_chain(self, raw):
        assume(len({lam for _, lam, _ in raw}) == len(raw))
        evs = sorted(make_events(raw), key=lambda e: -e.lambda_star)
        ref = brute_force_occupations([e.pair for e in evs], [e.p_lz for e in evs], 5)
        np.testing.assert_allclose(propagate_occupations(evs, 5).p, ref, atol=1e-12)

    def test_order_independent_of_input_order(self):
        evs = make_events([(0, 0.9, 0.3), (1, 0.5, 0.7), (0, 0.2, 0.4)])
        a = propagate_occupations(evs, 3).p
        b = propagate_occupations(evs[::-1], 3).p
        np.testing.assert_array_equal(a, b)

    def test_simultaneous_events_ascending_pair(self):
        evs = make_events([(1, 0.5, 1.0), (0, 0.5, 1.0)])
        # pair 0 first: 0 -> 1, then pair 1: 1 -> 2
        assert propagate_occupations(evs, 3).p[2, 0] == 1.0

    def test_three_level_half_swaps(self):
        evs = make_events([(0, 0.8, 0.5), (1, 0.4, 0.5)])
        np.testing.assert_allclose(propagate_occupations(evs, 3).p[:, 0], [0.5, 0.25, 0.25], atol=1e-15)

    def test_no_events_is_identity(self):
        np.testing.assert_array_equal(propagate_occupations([], 4).p, np.eye(4))

    def test_full_swap(self):
        occ = propagate_occupations(make_events([(0, 0.5, 1.0)]), 2)
        np.testing.assert_array_equal(occ.p, [[0, 1], [1, 0]])

    def test_validation(self):
        with pytest.raises(ValueError):
            propagate_occupations(make_events([(4, 0.5, 0.1)]), 5)
        with pytest.raises(ValueError):
            propagate_occupations([AnticrossingEvent(0, 0.5, 0.1, 1.0, p_lz=1.5)], 2)


def test_monte_carlo_agrees_within_binomial_error():
    rng = np.random.default_rng(42)
    raw = [(int(rng.integers(0, 4)), float(rng.random()), float(rng.random())) for _ in range(12)]
    evs = make_events(raw)
    det = propagate_occupations(evs, 5).p
    samples = 20_000
    mc = simulate_hopping(evs, 5, samples, np.random.default_rng(7)).p
    sigma = np.sqrt(det * (1 - det) / samples) + 1e-12
    assert np.all(np.abs(mc - det) <= 4 * sigma + 1e-12)


def test_with_probabilities_uses_sweep():
    evs = [AnticrossingEvent(0, 0.5, 0.2, 0.5)]
    slow = with_probabilities(evs, SweepSpec(1000.0))[0].p_lz
    fast = with_probabilities(evs, SweepSpec(1.0))[0].p_lz
    assert slow < fast
    assert with_probabilities([], SweepSpec(1.0)) == []
