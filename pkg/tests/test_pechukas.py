import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import spectral_flow_fd, two_level_gap_squared
from pechukas_aqc.hamiltonian import (
    BiasKind,
    EnsembleSpec,
    HermitianMatrix,
    ProblemDefinition,
    cnot_problem,
    initial_conditions_exact,
    initial_conditions_perturbative,
    sample_ensemble,
)
from pechukas_aqc.pechukas import (
    IntegrationError,
    IntegratorConfig,
    PechukasState,
    SingularityError,
    conserved,
    derivatives,
    integrate,
    track_spectrum_oracle,
)


def gue(n, seed, z=10.0, sigma=1.0, hb=BiasKind.RANDOM):
    return sample_ensemble(EnsembleSpec(n, sigma_h0=sigma, hb_kind=hb, seed=seed), z=z)


def state_at(p, lam):
    """Exact gas configuration at an arbitrary lam."""
    w, u = np.linalg.eigh(p.hamiltonian(lam))
    vm = u.conj().T @ p.bias @ u
    l = (w[:, None] - w[None, :]) * vm
    np.fill_diagonal(l, 0)
    return PechukasState(lam, w, vm.diagonal().real.copy(), l)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 7), st.integers(0, 10_000), st.floats(0.1, 0.9))
def test_equations_of_motion_match_spectral_flow(n, seed, lam):
    p = gue(n, seed, z=2.0)
    s = state_at(p, lam)
    e, d1, d2 = spectral_flow_fd(p.h0.entries, p.bias, lam)
    dx, dv, _ = derivatives(s)
    gap = np.min(np.diff(e))
    if gap < 1e-2:  # finite differences lose accuracy near anticrossings
        return
    np.testing.assert_allclose(dx, d1, atol=1e-6 * max(1, np.max(np.abs(d1))))
    np.testing.assert_allclose(dv, d2, atol=1e-4 * max(1, np.max(np.abs(d2))))


def test_l_equation_matches_exact_derivative():
    p = gue(5, 3, z=2.0)
    lam, h = 0.6, 1e-5
    _, _, dl = derivatives(state_at(p, lam))
    # |l_mn|^2 is gauge invariant: compare its derivative
    a = np.abs(state_at(p, lam + h).l) ** 2
    b = np.abs(state_at(p, lam - h).l) ** 2
    l = state_at(p, lam).l
    num = (a - b) / (2 * h)
    ana = 2 * np.real(np.conj(l) * dl)
    np.testing.assert_allclose(ana, num, atol=1e-5 * np.max(np.abs(num)))


def test_derivatives_keep_antihermitian_structure():
    s = state_at(gue(6, 1), 0.4)
    _, _, dl = derivatives(s)
    assert np.max(np.abs(dl + dl.conj().T)) == 0.0
    assert np.all(np.diag(dl) == 0)


def test_conserved_quantities_are_traces():
    p = gue(6, 2)
    for lam in (1.0, 0.5, 0.1):
        c = conserved(state_at(p, lam))
        zb = p.bias
        assert c.total_momentum == pytest.approx(np.trace(zb).real, rel=1e-12)
        assert c.gas_energy == pytest.approx(0.5 * np.trace(zb @ zb).real, rel=1e-10)


def test_singularity_reported():
    s = PechukasState(0.5, np.array([0.0, 0.0]), np.zeros(2), np.array([[0, 1.0], [-1.0, 0]], complex))
    with pytest.raises(SingularityError) as exc:
        derivatives(s)
    assert exc.value.pair == (0, 1)


def test_uncoupled_levels_may_coincide():
    s = PechukasState(0.5, np.array([0.0, 0.0, 1.0]), np.zeros(3), np.zeros((3, 3), complex))
    dx, dv, dl = derivatives(s)
    assert np.all(dv == 0) and np.all(dl == 0)


@pytest.fixture(scope="module")
def run8():
    p = gue(8, 7)
    return p, integrate(p, initial_conditions_exact(p))


class TestIntegrate:
    def test_endpoint_is_h0_spectrum(self, run8):
        p, tr = run8
        e = np.linalg.eigvalsh(p.h0.entries)
        assert np.max(np.abs(tr.final.x - e)) < 1e-8 * tr.spectral_range

    def test_conservation(self, run8):
        _, tr = run8
        assert tr.metadata["momentum_drift"] < 1e-8
        assert tr.metadata["energy_drift"] < 1e-8
        assert tr.metadata["antihermitian_defect"] < 1e-10

    def test_matches_oracle(self, run8):
        p, tr = run8
        o = track_spectrum_oracle(p, 200)
        dev = np.max(np.abs(tr.positions(o.lam) - o.x))
        assert dev < 1e-6 * tr.spectral_range

    def test_oracle_endpoint_equals_initial_conditions(self, run8):
        p, _ = run8
        o = track_spectrum_oracle(p, 5)
        np.testing.assert_allclose(o.x[0], initial_conditions_exact(p).x, atol=1e-12)

    def test_ordering_preserved(self, run8):
        _, tr = run8
        assert np.all(np.diff(tr.node_x, axis=1) > 0)

    def test_dense_output(self, run8):
        _, tr = run8
        assert tr.x.shape == (2000, 8)
        assert tr.lam[0] == 1.0 and tr.lam[-1] == 0.0
        np.testing.assert_array_equal(tr.x[-1], tr.final.x)


def test_tolerance_convergence():
    p = gue(6, 11)
    s0 = initial_conditions_exact(p)
    a = integrate(p, s0, IntegratorConfig(rel_tol=1e-8, abs_tol=1e-10))
    b = integrate(p, s0, IntegratorConfig(rel_tol=5e-9, abs_tol=5e-11))
    assert np.max(np.abs(a.final.x - b.final.x)) < 10 * 1e-8 * a.spectral_range


def test_drift_decreases_with_tolerance():
    p = gue(6, 12)
    s0 = initial_conditions_exact(p)
    loose = integrate(p, s0, IntegratorConfig(rel_tol=1e-5, abs_tol=1e-7))
    tight = integrate(p, s0, IntegratorConfig(rel_tol=1e-10, abs_tol=1e-12))
    assert tight.metadata["energy_drift"] < loose.metadata["energy_drift"]
    assert tight.metadata["accepted_steps"] > loose.metadata["accepted_steps"]


def test_two_level_gap_is_quadratic():
    h0 = np.array([[0.3, 0.2 + 0.1j], [0.2 - 0.1j, -0.1]])
    hb = np.diag([0.0, 1.0])
    p = ProblemDefinition(HermitianMatrix(h0), HermitianMatrix(hb), 2.0)
    tr = integrate(p, initial_conditions_exact(p))
    g2 = (tr.x[:, 1] - tr.x[:, 0]) ** 2
    coef = np.polyfit(tr.lam, g2, 2)
    resid = np.max(np.abs(np.polyval(coef, tr.lam) - g2)) / np.max(g2)
    assert resid < 1e-9
    np.testing.assert_allclose(g2, two_level_gap_squared(h0, p.bias, tr.lam), rtol=1e-9)


def test_cnot_levels_cross_only_between_blocks():
    p = cnot_problem()
    tr = integrate(p, initial_conditions_perturbative(p))
    e = np.linalg.eigvalsh(p.h0.entries)
    assert np.max(np.abs(np.sort(tr.final.x) - e)) < 1e-8


def test_l_checkpoints():
    p = gue(5, 4)
    s0 = initial_conditions_exact(p)
    tr = integrate(p, s0, IntegratorConfig(l_checkpoints=(1.0, 0.5)))
    assert set(tr.l_checkpoints) == {1.0, 0.5}
    exact = state_at(p, 0.5)
    # gauge-free check on |l|
    np.testing.assert_allclose(np.abs(tr.l_checkpoints[0.5]), np.abs(exact.l), atol=1e-6 * np.max(np.abs(exact.l)))


def test_step_underflow_raises():
    p = gue(4, 5)
    with pytest.raises(IntegrationError):
        integrate(p, initial_conditions_exact(p), IntegratorConfig(rel_tol=1e-16, abs_tol=1e-300, max_step=1e-3, min_step=5e-4))


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0)
    with pytest.raises(ValueError):
        IntegratorConfig(min_step=1e-2, max_step=1e-3)
    with pytest.raises(ValueError):
        IntegratorConfig(dense_output_points=1)


def test_oracle_dimension_guard():
    with pytest.raises(ValueError):
        track_spectrum_oracle(gue(65, 0), 10)


def test_oracle_handles_degenerate_endpoint():
    p = gue(5, 9)
    p0 = ProblemDefinition(HermitianMatrix(np.zeros((5, 5))), p.hb, p.z)
    o = track_spectrum_oracle(p0, 11)
    # linear flow x = lam * eig(Z Hb): velocities constant, no acceleration
    np.testing.assert_allclose(o.v[-1], np.linalg.eigvalsh(p0.bias), atol=1e-12)
    assert np.all(np.isfinite(o.node_a)) and np.max(np.abs(o.node_a)) < 1e-8


def test_two_particle_derivatives():
    s = PechukasState(0.5, np.array([0.0, 1.0]), np.zeros(2), np.array([[0, 1.0], [-1.0, 0]], complex))
    dx, dv, dl = derivatives(s)
    np.testing.assert_array_equal(dx, [0.0, 0.0])
    np.testing.assert_allclose(dv, [-2.0, 2.0], rtol=1e-15)
    assert np.all(dl == 0)


def test_two_particle_conserved():
    s = PechukasState(0.5, np.array([0.0, 1.0]), np.array([1.0, -1.0]), np.array([[0, 1.0], [-1.0, 0]], complex))
    c = conserved(s)
    assert c.total_momentum == 0.0
    assert c.gas_energy == pytest.approx(2.0, rel=1e-15)
    free = conserved(PechukasState(0.5, np.array([0.0, 1.0]), np.array([1.0, 3.0]), np.zeros((2, 2), complex)))
    assert free.gas_energy == 5.0


def test_zero_h0_is_linear_flow():
    p = gue(6, 11)
    p0 = ProblemDefinition(HermitianMatrix(np.zeros((6, 6))), p.hb, p.z)
    tr = integrate(p0, initial_conditions_exact(p0))
    e = np.linalg.eigvalsh(p0.bias)
    np.testing.assert_allclose(tr.x, tr.lam[:, None] * e[None, :], atol=1e-9 * np.ptp(e))
