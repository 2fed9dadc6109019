"""Mean-field kinetic evolution of a binned gas compared with the direct level dynamics.

    python scripts/kinetic_vs_direct.py --dim 100 --seed 3 --lam-end 0.5
"""

import argparse

import numpy as np

from pechukas_aqc.hamiltonian import BiasKind, EnsembleSpec, initial_conditions_exact, sample_ensemble
from pechukas_aqc.kinetic import KineticConfig, bin_state, estimate_gamma, evolve, phase_grid
from pechukas_aqc.pechukas import IntegratorConfig, PechukasState, integrate


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=100)
    ap.add_argument("--seed", type=int, default=3)
    ap.add_argument("--z", type=float, default=10.0)
    ap.add_argument("--sigma-h0", type=float, default=1.0)
    ap.add_argument("--lam-end", type=float, default=0.5)
    ap.add_argument("--nx", type=int, default=256)
    ap.add_argument("--nv", type=int, default=128)
    args = ap.parse_args()

    p = sample_ensemble(EnsembleSpec(args.dim, sigma_h0=args.sigma_h0, hb_kind=BiasKind.RANDOM, seed=args.seed), z=args.z)
    s0 = initial_conditions_exact(p)
    traj = integrate(p, s0, IntegratorConfig(dense_output_points=3))
    x1, v1 = traj.positions(args.lam_end)[0], traj.velocities(args.lam_end)[0]
    gx, gv = phase_grid(np.r_[s0.x, x1], np.r_[s0.v, v1], args.nx, args.nv)
    direct = bin_state(PechukasState(args.lam_end, x1, v1, s0.l), gx, gv, per_level=False).x_spread()
    f0 = bin_state(s0, gx, gv, per_level=False)
    gamma = estimate_gamma([s0.l])

    print(f"N={args.dim}, Gamma={gamma:.4g}, x-spread at lam=1: {f0.x_spread():.2f}, direct at lam={args.lam_end}: {direct:.2f}")
    print(f"particle free streaming x - (1 - lam) v: {np.std(s0.x - (1 - args.lam_end) * s0.v):.2f}")
    for label, g in (("kinetic, free streaming", 0.0), ("kinetic, mean field", gamma)):
        f1, _ = evolve(f0, KineticConfig(gamma_mf=g), args.lam_end)
        print(f"{label:>24}: spread {f1.x_spread():.2f} ({f1.x_spread() / direct - 1:+.1%}), "
              f"mass {f1.mass().sum():.6f}, momentum {f1.momentum():.4g} (start {f0.momentum():.4g})")


if __name__ == "__main__":
    main()
