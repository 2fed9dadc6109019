"""Survival-probability campaign on GUE problems: P(n|n) versus 1/T and its power-law exponents.

    python scripts/survival_campaign.py --dim 50 --realizations 100 --checkpoints ck --out campaign

Checkpoints make the run resumable. ``--reference-time`` sets the energy
scale (mean H0 spacing = hbar / reference_time); several values can be given
to study how the fitted exponents depend on it.
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np

from pechukas_aqc.ensemble import DEFAULT_LEVELS, CampaignSpec, fit_deviation, fit_survival, run_campaign
from pechukas_aqc.io import write_ensemble_outputs, write_manifest


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dim", type=int, default=50)
    ap.add_argument("--realizations", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--hb-kind", default="random-same-ensemble")
    ap.add_argument("--reference-time", type=float, nargs="+", default=[1.0])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--checkpoints", type=Path, default=None)
    ap.add_argument("--out", type=Path, default=Path("campaign"))
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    levels = tuple(sorted({n for n in DEFAULT_LEVELS if n <= args.dim} | {1, (args.dim + 1) // 2, args.dim}))
    base = CampaignSpec.standard(args.dim, hb_kind=args.hb_kind, realizations=args.realizations,
                                 tracked_levels=levels, seed=args.seed)
    for t_ref in args.reference_time:
        spec = replace(base, reference_time=t_ref)
        tag = f"tref_{t_ref:g}"
        ckpt = args.checkpoints / tag if args.checkpoints else None
        stats = run_campaign(spec, workers=args.workers, checkpoint_dir=ckpt)
        fits, errors = [], {}
        for n in levels:
            try:
                fits.append(fit_survival(stats, n))
            except ValueError as exc:
                errors[n] = str(exc)
        out = args.out / tag
        write_ensemble_outputs(stats, fits, out, levels, errors)
        write_manifest(out, "survival_campaign", {"script": "scripts/survival_campaign.py"}, {"campaign": spec.to_dict()})

        print(f"reference time {t_ref:g}: {stats.realizations_completed} realizations")
        print(f"{'level':>5} {'gamma':>7} {'stderr':>7} {'dev. gamma':>10}  P(n|n) from fast to slow")
        order = np.argsort(stats.sweep_times)
        for f in fits:
            try:
                dg = f"{fit_deviation(stats, f.level).gamma:10.3f}"
            except ValueError:
                dg = f"{'-':>10}"
            row = " ".join(f"{v:.3f}" for v in stats.survival[order, f.level - 1])
            print(f"{f.level:5d} {f.gamma:7.3f} {f.gamma_stderr:7.3f} {dg}  {row}")
        for n, msg in errors.items():
            print(f"{n:5d} fit failed: {msg}")
        c = stats.crossing_counts
        print(f"mean avoided-crossing counts: edges {c[0]:.2f}, {c[-1]:.2f}; peak {c.max():.2f}; "
              f"max |second difference| / peak {np.max(np.abs(np.diff(c, 2))) / c.max():.3f}")


if __name__ == "__main__":
    main()
