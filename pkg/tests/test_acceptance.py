"""Primary acceptance criteria, one test per criterion.

The N = 50 campaign is checkpointed in the pytest cache, so only the first
run pays for it (several minutes on one core).
"""

import numpy as np
import pytest

from acceptance_log import report
from pechukas_aqc.cli import cnot_report, oracle_deviation
from pechukas_aqc.ensemble import DEFAULT_LEVELS, CampaignSpec, fit_survival, realization_seed, run_campaign
from pechukas_aqc.hamiltonian import (
    BiasKind,
    CnotConfig,
    EnsembleKind,
    EnsembleSpec,
    HermitianMatrix,
    ProblemDefinition,
    cnot_problem,
    initial_conditions_exact,
    initial_conditions_perturbative,
    sample_ensemble,
)
from pechukas_aqc.kinetic import (
    KineticConfig,
    PhaseSpaceDistribution,
    admissible_step,
    bin_state,
    collision_integral,
    estimate_gamma,
    evolve,
    phase_grid,
    step_kinetic,
)
from pechukas_aqc.pechukas import IntegratorConfig, PechukasState, integrate
from pechukas_aqc.transitions import AnticrossingEvent, propagate_occupations, simulate_hopping

pytestmark = pytest.mark.slow

DEFAULT_INTEGRATOR = IntegratorConfig()
CONSERVATION: list[tuple[str, dict]] = []


def _drifts(label, meta):
    CONSERVATION.append((label, {k: meta[k] for k in ("momentum_drift", "energy_drift", "antihermitian_defect")}))


@pytest.fixture(scope="module")
def campaign(request):
    spec = CampaignSpec.standard(50, realizations=100, tracked_levels=DEFAULT_LEVELS, seed=0)
    ckpt = request.config.cache.mkdir("acceptance_campaign_n50")
    return spec, run_campaign(spec, workers=1, checkpoint_dir=ckpt)


def test_cnot_verification():
    p = cnot_problem(CnotConfig(-0.1), z=10.0)
    traj = integrate(p, initial_conditions_perturbative(p), DEFAULT_INTEGRATOR)
    _drifts("cnot", traj.metadata)
    rep = cnot_report(p, traj.final.x)
    same = rep["multiplicities_pechukas"] == rep["multiplicities_exact"]
    ok = report("CNOT verification", rep["min_significant_figures"] >= 4 and same and rep["degeneracy_tol"] > 0,
                f"min significant figures {rep['min_significant_figures']:.2f} (need 4), multiplicities "
                f"{rep['multiplicities_pechukas']} vs {rep['multiplicities_exact']}")
    assert ok


def test_integrator_oracle_equivalence():
    worst = 0.0
    for k in range(20):
        seed = realization_seed(2024, k)
        p = sample_ensemble(EnsembleSpec(8, EnsembleKind.GUE, 1.0, BiasKind.RANDOM, seed), z=10.0)
        d, _, _ = oracle_deviation(p, IntegratorConfig(rel_tol=1e-9), 200)
        worst = max(worst, d)
        _drifts(f"oracle {k}", integrate(p, initial_conditions_exact(p)).metadata)
    ok = report("Integrator oracle equivalence", worst < 1e-6, f"max deviation {worst:.2e} x spectral range (need < 1e-6)")
    assert ok


def test_two_level_quadratic_gap():
    h0 = np.array([[0.3, 0.2 + 0.1j], [0.2 - 0.1j, -0.1]])
    p = ProblemDefinition(HermitianMatrix(h0), HermitianMatrix(np.diag([0.0, 1.0])), 2.0)
    traj = integrate(p, initial_conditions_exact(p))
    _drifts("two-level", traj.metadata)
    g2 = (traj.x[:, 1] - traj.x[:, 0]) ** 2
    coef = np.polyfit(traj.lam, g2, 2)
    resid = float(np.max(np.abs(np.polyval(coef, traj.lam) - g2)) / np.max(g2))
    ok = report("Two-level analytic check", resid < 1e-9, f"relative residual of quadratic fit {resid:.2e} (need < 1e-9)")
    assert ok


def test_scaling_exponents(campaign):
    spec, stats = campaign
    fits = {n: fit_survival(stats, n) for n in (1, 25, 50)}
    g1, g25, g50 = (fits[n].gamma for n in (1, 25, 50))
    ok = 0.4 <= g25 <= 0.6 and g1 <= 0.35 and g50 <= 0.35 and g1 < g25 and g50 < g25
    detail = (f"gamma(1)={g1:.3f}+-{fits[1].gamma_stderr:.3f}, gamma(25)={g25:.3f}+-{fits[25].gamma_stderr:.3f}, "
              f"gamma(50)={g50:.3f}+-{fits[50].gamma_stderr:.3f} (need gamma(25) in [0.4, 0.6], edges <= 0.35 and "
              f"below gamma(25)); {stats.realizations_completed} realizations")
    assert report("Scaling exponents", ok, detail)


def test_saturation(campaign):
    spec, stats = campaign
    slow = 1.0 / stats.sweep_times < 0.01
    worst = float(np.min(stats.survival[np.ix_(slow, np.array(spec.tracked_levels) - 1)]))
    ok = report("Saturation", worst >= 0.98, f"min P(n|n) over tracked levels at 1/T < 0.01 is {worst:.3f} (need >= 0.98)")
    assert ok


def test_smooth_crossing_counts(campaign):
    _, stats = campaign
    c = stats.crossing_counts
    second = float(np.max(np.abs(np.diff(c, 2))))
    ratio = second / float(np.max(c))
    ok = ratio <= 0.25 and c[0] < 1 and c[-1] < 1
    detail = (f"max |second difference| / peak = {ratio:.3f} (need <= 0.25), edge means {c[0]:.2f}, {c[-1]:.2f} "
              f"(need < 1), peak {np.max(c):.2f}")
    assert report("Smooth crossing counts", ok, detail)


def test_conservation(campaign):
    _, stats = campaign
    rows = list(CONSERVATION) + [("campaign", {"momentum_drift": stats.metadata["max_momentum_drift"],
                                               "energy_drift": stats.metadata["max_energy_drift"],
                                               "antihermitian_defect": stats.metadata["max_antihermitian_defect"]})]
    mom = max(r["momentum_drift"] for _, r in rows)
    en = max(r["energy_drift"] for _, r in rows)
    ah = max(r["antihermitian_defect"] for _, r in rows)
    ok = mom < 1e-8 and en < 1e-8 and ah < 1e-10
    detail = (f"over {len(rows) - 1} single runs and {stats.realizations_completed} campaign runs: momentum drift "
              f"{mom:.1e}, energy drift {en:.1e} (need < 1e-8), l anti-Hermitian defect {ah:.1e} (need < 1e-10)")
    assert report("Conservation", ok, detail)


def test_transfer_matrix_vs_monte_carlo():
    rng = np.random.default_rng(11)
    samples, worst, lists = 100_000, 0.0, 5
    for _ in range(lists):
        k = int(rng.integers(4, 15))
        evs = [AnticrossingEvent(int(rng.integers(0, 4)), float(rng.random()), 0.1, 1.0, p_lz=float(rng.random()))
               for _ in range(k)]
        det = propagate_occupations(evs, 5).p
        mc = simulate_hopping(evs, 5, samples, rng).p
        sigma = np.sqrt(det * (1 - det) / samples)
        z = np.where(sigma > 0, np.abs(mc - det) / np.where(sigma > 0, sigma, 1), np.where(mc == det, 0, np.inf))
        worst = max(worst, float(np.max(z)))
    ok = report("Transfer matrix vs Monte Carlo", worst <= 3,
                f"{lists} event lists, N=5, 1e5 samples: max |MC - TM| = {worst:.2f} sigma (need <= 3)")
    assert ok


def _centres(lo, hi, n):
    h = (hi - lo) / n
    return lo + h * (np.arange(n) + 0.5)


def test_kinetic_module():
    # free streaming of a Gaussian bump on a 256 x 256 grid
    gx, gv = _centres(-10, 10, 256), _centres(-3, 3, 256)
    X, V = np.meshgrid(gx, gv, indexing="ij")
    f0 = np.exp(-((X + 2) ** 2 / 0.5 + V**2 / 0.5))[None]
    f0 /= f0.sum() * (gx[1] - gx[0]) * (gv[1] - gv[0])
    f = PhaseSpaceDistribution(gx, gv, f0)
    dlam = -0.9 * admissible_step(f, KineticConfig())
    g = step_kinetic(f, KineticConfig(), dlam)
    exact = np.exp(-((X - V * dlam + 2) ** 2 / 0.5 + V**2 / 0.5))[None]
    exact /= exact.sum() * f.dx * f.dv
    stream_err = float(np.max(np.abs(g.f - exact)) / np.max(exact))

    # collision bracket for label-uniform f
    base = np.random.default_rng(0).random((1, 16, 24))
    fu = PhaseSpaceDistribution(_centres(0, 1, 16), _centres(-1, 1, 24), np.repeat(base, 3, axis=0))
    coll = float(np.max(np.abs(collision_integral(fu, KineticConfig(gamma_st=1.0)))))
    # against the size of the integral for two labels that differ
    mixed = PhaseSpaceDistribution(fu.grid_x, fu.grid_v, np.concatenate([base, base[..., ::-1]]))
    coll /= float(np.max(np.abs(collision_integral(mixed, KineticConfig(gamma_st=1.0)))))

    # N = 100 direct simulation vs kinetic evolution over dlam = 0.5
    p = sample_ensemble(EnsembleSpec(100, sigma_h0=1.0, hb_kind=BiasKind.RANDOM, seed=3), z=10.0)
    s0 = initial_conditions_exact(p)
    tr = integrate(p, s0, IntegratorConfig(dense_output_points=3))
    x5, v5 = tr.positions(0.5)[0], tr.velocities(0.5)[0]
    grid_x, grid_v = phase_grid(np.r_[s0.x, x5], np.r_[s0.v, v5])
    direct = bin_state(PechukasState(0.5, x5, v5, s0.l), grid_x, grid_v, per_level=False).x_spread()
    kin, _ = evolve(bin_state(s0, grid_x, grid_v, per_level=False),
                    KineticConfig(gamma_mf=estimate_gamma([s0.l])), 0.5)
    rel = kin.x_spread() / direct - 1.0

    ok = stream_err < 1e-3 and coll < 1e-12 and abs(rel) < 0.15
    detail = (f"free-streaming error {stream_err:.1e} (need < 1e-3), label-uniform collision {coll:.1e} relative (need < 1e-12), "
              f"N=100 x-spread kinetic {kin.x_spread():.1f} vs direct {direct:.1f}: {rel:+.1%} (need within 15%)")
    assert report("Kinetic module", ok, detail)
