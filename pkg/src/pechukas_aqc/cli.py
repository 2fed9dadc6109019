"""Command-line front end.

    pechukas simulate | cnot | ensemble | kinetic | oracle-check [options]

Every option can also come from an INI file (``--config``) whose sections
are ``run``, ``integrator``, ``sweep``, ``problem``, ``cnot``, ``campaign``,
``kinetic`` and ``oracle``; keys are the long option names with dashes
replaced by underscores. Command-line flags win over the file.

Exit codes: 0 success, 1 compute failure, 2 invalid input. Data go to files
in ``--out``; stdout gets one summary line, logs go to stderr (level from
``PECHUKAS_LOG``).
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .ensemble import DEFAULT_INV_T, DEFAULT_LEVELS, CampaignError, CampaignSpec, fit_deviation, fit_survival, run_campaign
from .hamiltonian import (
    DEGENERACY_TOL,
    BiasKind,
    CnotConfig,
    DegeneracyError,
    EigensolverError,
    EnsembleKind,
    EnsembleSpec,
    HermitianMatrix,
    ProblemDefinition,
    cnot_problem,
    diagonalize,
    initial_conditions_exact,
    initial_conditions_perturbative,
    read_matrix,
    sample_ensemble,
)
from .io import write_ensemble_outputs, write_events, write_json, write_manifest, write_occupations, write_trajectory
from .kinetic import KineticConfig, bin_state, estimate_gamma, evolve, phase_grid, write_snapshot
from .pechukas import IntegrationError, IntegratorConfig, PechukasState, SingularityError, integrate, track_spectrum_oracle
from .transitions import SweepSpec, detect_anticrossings, propagate_occupations

log = logging.getLogger("pechukas_aqc")

EXIT_OK, EXIT_COMPUTE, EXIT_VALIDATION = 0, 1, 2


class ValidationError(ValueError):
    pass


class ComputeFailure(RuntimeError):
    pass


# --------------------------------------------------------------------------
# option plumbing

@dataclass
class Option:
    flags: tuple[str, ...]
    section: str
    type: type
    default: object
    help: str = ""
    choices: tuple | None = None

    @property
    def dest(self) -> str:
        return self.flags[0].lstrip("-").replace("-", "_")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(t) for t in str(text).replace(";", ",").split(",") if t.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(t) for t in str(text).replace(";", ",").split(",") if t.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


COMMON = [
    Option(("--seed",), "run", int, 0, "master seed (unsigned 64-bit)"),
    Option(("--workers",), "run", int, None, "worker processes (default: available cores)"),
    Option(("--dim",), "problem", int, None, "matrix dimension for built-in generators"),
    Option(("--realizations",), "campaign", int, 100, "ensemble realizations"),
    Option(("--z",), "problem", float, None, "bias multiplier Z"),
    Option(("--rel-tol",), "integrator", float, 1e-9, "integrator relative tolerance"),
    Option(("--abs-tol",), "integrator", float, 1e-11, "integrator absolute tolerance"),
    Option(("--max-step",), "integrator", float, 1e-3, "largest lam step"),
    Option(("--dense-points",), "integrator", int, 2000, "rows of the trajectory dump"),
]

PER_COMMAND = {
    "simulate": [
        Option(("--h0",), "problem", str, None, "H0 matrix file"),
        Option(("--hb",), "problem", str, None, "Hb matrix file"),
        Option(("--builtin",), "problem", str, "two-level", "generator when no files are given", ("two-level", "gue", "goe", "cnot")),
        Option(("--sigma-h0",), "problem", float, None, "r.m.s. of H0 off-diagonal entries (gue/goe)"),
        Option(("--hb-kind",), "problem", str, "random-same-ensemble", "bias for gue/goe", tuple(b.value for b in BiasKind)),
        Option(("--sweep-time",), "sweep", float, 100.0, "total sweep time T"),
        Option(("--hbar",), "sweep", float, 1.0, "Planck constant in code units"),
        Option(("--initial",), "problem", str, "exact", "initial conditions", ("exact", "perturbative")),
    ],
    "cnot": [
        Option(("--epsilon",), "cnot", float, -0.1, "input-selecting bias epsilon"),
        Option(("--hb",), "problem", str, None, "Hb matrix file (default: dithered picket fence)"),
        Option(("--initial",), "cnot", str, "perturbative", "initial conditions", ("exact", "perturbative")),
        Option(("--min-sig-figs",), "cnot", float, 4.0, "required agreement with diagonalization"),
    ],
    "ensemble": [
        Option(("--ensemble-kind",), "campaign", str, "GUE", "random matrix ensemble", ("GUE", "GOE")),
        Option(("--hb-kind",), "campaign", str, "random-same-ensemble", "bias kind", tuple(b.value for b in BiasKind)),
        Option(("--inv-t",), "campaign", _floats, DEFAULT_INV_T, "comma separated 1/T values"),
        Option(("--levels",), "campaign", _ints, None, "1-based tracked levels"),
        Option(("--normalization",), "campaign", str, "fig1b", "energy normalization", ("fig1b", "raw")),
        Option(("--reference-time",), "campaign", float, 1.0, "T at which <dE>(H0) = hbar/T"),
        Option(("--fluctuation-ratio",), "campaign", float, 0.1, "H0 r.m.s. over the spacing of Z Hb"),
        Option(("--crossing-threshold",), "campaign", float, 1e-3, "p_lz above which an event is counted"),
        Option(("--crossing-time",), "campaign", float, None, "T used for counting (default: middle of sweep)"),
        Option(("--fit-saturation",), "campaign", float, 0.9, "points with P above this are excluded from fits"),
    ],
    "kinetic": [
        Option(("--lam-end",), "kinetic", float, 0.5, "final lam (evolution starts at 1)"),
        Option(("--nx",), "kinetic", int, 256, "x cells"),
        Option(("--nv",), "kinetic", int, 128, "v cells"),
        Option(("--gamma-mf",), "kinetic", float, None, "mean-field Gamma (default: estimated from l)"),
        Option(("--gamma-st",), "kinetic", float, 0.0, "collision constant (experimental)"),
        Option(("--kappa",), "kinetic", float, 1.0, "exchange kernel constant"),
        Option(("--collision-kernel",), "kinetic", str, "abs", "collision weight |u-v| or signed u-v", ("abs", "signed")),
        Option(("--pv-cutoff",), "kinetic", float, 2.0, "principal value cutoff in cells"),
        Option(("--cfl",), "kinetic", float, 0.4, "CFL number"),
        Option(("--per-level",), "kinetic", _bool, False, "one label per level instead of a single label"),
        Option(("--compare",), "kinetic", _bool, True, "also integrate the gas directly and compare spreads"),
        Option(("--full-grid",), "kinetic", _bool, False, "dump the full grid as CSV"),
    ],
    "oracle-check": [
        Option(("--count",), "oracle", int, 20, "number of seeded problems"),
        Option(("--grid-points",), "oracle", int, 200, "diagonalization grid"),
        Option(("--threshold",), "oracle", float, 1e-6, "allowed deviation / spectral range"),
        Option(("--zero-h0",), "oracle", _bool, False, "use H0 = 0 (linear flow)"),
    ],
}

COMMAND_DEFAULT_DIM = {"simulate": None, "ensemble": 50, "kinetic": 100, "oracle-check": 8, "cnot": 16}
COMMAND_DEFAULT_Z = {"simulate": 1.0, "cnot": 10.0, "ensemble": 10.0, "kinetic": 10.0, "oracle-check": 10.0}


def _add(parser: argparse.ArgumentParser, opt: Option) -> None:
    kw = {"dest": opt.dest, "default": None, "help": opt.help}
    if opt.type is _bool:
        kw["type"] = _bool
        kw["metavar"] = "BOOL"
    else:
        kw["type"] = opt.type
    if opt.choices:
        kw["choices"] = opt.choices
    parser.add_argument(*opt.flags, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pechukas", description="Adiabatic evolution as a Pechukas gas.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in PER_COMMAND.items():
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI file with per-module sections")
        p.add_argument("--out", default=None, help="output directory (default: ./pechukas-<command>)")
        seen = set()
        for opt in COMMON + opts:
            if opt.dest in seen:
                continue
            seen.add(opt.dest)
            _add(p, opt)
    return parser


@dataclass
class RunConfig:
    command: str
    out_dir: Path
    values: dict = field(default_factory=dict)
    config_file: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    @property
    def workers(self) -> int:
        w = self.values.get("workers")
        return int(w) if w else (os.cpu_count() or 1)

    @property
    def integrator(self) -> IntegratorConfig:
        return IntegratorConfig(rel_tol=self["rel_tol"], abs_tol=self["abs_tol"], max_step=self["max_step"],
                                dense_output_points=self["dense_points"])

    def manifest(self) -> dict:
        return {"command": self.command, "out_dir": str(self.out_dir), "config_file": self.config_file,
                "values": dict(self.values)}


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the INI file and command-line flags, then validate."""
    cp = configparser.ConfigParser()
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ValidationError(f"config file not found: {path}")
        try:
            cp.read(path)
        except configparser.Error as exc:
            raise ValidationError(f"{path}: {exc}") from None
    values = {}
    seen = set()
    for opt in COMMON + PER_COMMAND[args.command]:
        if opt.dest in seen:
            continue
        seen.add(opt.dest)
        val = getattr(args, opt.dest)
        if val is None and cp.has_option(opt.section, opt.dest):
            raw = cp.get(opt.section, opt.dest)
            try:
                val = opt.type(raw)
            except ValueError:
                raise ValidationError(f"config [{opt.section}] {opt.dest}: cannot parse {raw!r}") from None
            if opt.choices and val not in opt.choices:
                raise ValidationError(f"config [{opt.section}] {opt.dest}: {val!r} not in {opt.choices}")
        if val is None:
            val = opt.default
        values[opt.dest] = val
    if values.get("dim") is None:
        values["dim"] = COMMAND_DEFAULT_DIM.get(args.command)
    if values.get("z") is None:
        values["z"] = COMMAND_DEFAULT_Z[args.command]
    out = args.out
    if out is None and cp.has_option("run", "out"):
        out = cp.get("run", "out")
    out_dir = Path(out) if out else Path(f"pechukas-{args.command}")
    cfg = RunConfig(args.command, out_dir, values, args.config)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    v = cfg.values
    if not 0 <= v["seed"] < 2**64:
        raise ValidationError("--seed must be an unsigned 64-bit integer")
    if v.get("workers") is not None and v["workers"] < 1:
        raise ValidationError("--workers must be >= 1")
    if v["dim"] is not None and v["dim"] < 2:
        raise ValidationError("--dim must be >= 2")
    if not v["z"] > 0:
        raise ValidationError("--z must be positive")
    if v["realizations"] < 1:
        raise ValidationError("--realizations must be >= 1")
    try:
        cfg.integrator
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    for key in ("h0", "hb"):
        path = v.get(key)
        if path is not None and not Path(path).is_file():
            raise ValidationError(f"input file not found: {path}")
    try:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
        probe = cfg.out_dir / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ValidationError(f"output directory {cfg.out_dir} is not writable: {exc}") from None


# --------------------------------------------------------------------------
# commands

def _two_level() -> ProblemDefinition:
    # H(lam) = [[0.5, 0.1], [0.1, lam]]: one anticrossing at lam = 0.5 with gap 0.2
    h0 = HermitianMatrix(np.array([[0.5, 0.1], [0.1, 0.0]]))
    hb = HermitianMatrix(np.diag([0.0, 1.0]))
    return ProblemDefinition(h0, hb, 1.0, 1.0, {"builtin": "two-level"})


def _simulate_problem(cfg: RunConfig) -> ProblemDefinition:
    v = cfg.values
    if v["h0"] or v["hb"]:
        if not (v["h0"] and v["hb"]):
            raise ValidationError("--h0 and --hb must be given together")
        try:
            h0, hb = read_matrix(v["h0"]), read_matrix(v["hb"])
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        if h0.dim != hb.dim:
            raise ValidationError(f"dimension mismatch: H0 is {h0.dim}, Hb is {hb.dim}")
        return ProblemDefinition(h0, hb, v["z"], v["hbar"], {"h0_file": v["h0"], "hb_file": v["hb"]})
    kind = v["builtin"]
    if kind == "two-level":
        p = _two_level()
        return ProblemDefinition(p.h0, p.hb, v["z"], v["hbar"], p.metadata)
    if kind == "cnot":
        p = cnot_problem(CnotConfig(), z=v["z"])
        return ProblemDefinition(p.h0, p.hb, p.z, v["hbar"], p.metadata)
    dim = v["dim"] or 8
    sigma = v["sigma_h0"] if v["sigma_h0"] is not None else 0.1 * v["z"]
    spec = EnsembleSpec(dim, EnsembleKind(kind.upper()), sigma, BiasKind(v["hb_kind"]), v["seed"])
    p = sample_ensemble(spec, z=v["z"])
    return ProblemDefinition(p.h0, p.hb, p.z, v["hbar"], p.metadata)


def _initial(p: ProblemDefinition, how: str):
    return initial_conditions_perturbative(p) if how == "perturbative" else initial_conditions_exact(p)


def cmd_simulate(cfg: RunConfig) -> str:
    p = _simulate_problem(cfg)
    sweep = SweepSpec(cfg["sweep_time"], p.hbar)
    traj = integrate(p, _initial(p, cfg["initial"]), cfg.integrator)
    events = detect_anticrossings(traj, sweep)
    occ = propagate_occupations(events, p.dim)
    out = cfg.out_dir
    write_trajectory(traj, out / "trajectory.csv", {"problem": p.metadata, "seed": cfg["seed"]})
    write_events(events, out / "events.csv")
    write_occupations(occ, out / "occupations.csv")
    meta = {
        "n": p.dim, "z": p.z, "hbar": p.hbar, "sweep_time": sweep.total_time,
        "momentum_drift": traj.metadata["momentum_drift"], "energy_drift": traj.metadata["energy_drift"],
        "antihermitian_defect": traj.metadata["antihermitian_defect"],
        "accepted_steps": traj.metadata["accepted_steps"], "rejected_steps": traj.metadata["rejected_steps"],
        "events": len(events), "survival": occ.survival(), "problem": p.metadata,
    }
    write_json(out / "metadata.json", meta)
    write_manifest(out, "simulate", cfg.manifest())
    return (f"simulate ok: N={p.dim} steps={traj.metadata['accepted_steps']} events={len(events)} "
            f"energy_drift={traj.metadata['energy_drift']:.2e} out={out}")


def degeneracy_multiplicities(e: np.ndarray, tol: float) -> list[int]:
    """Sizes of groups of sorted values whose neighbours lie within ``tol``."""
    e = np.sort(np.asarray(e, float))
    sizes, run = [], 1
    for a, b in zip(e[:-1], e[1:]):
        if b - a <= tol:
            run += 1
        else:
            sizes.append(run)
            run = 1
    sizes.append(run)
    return sizes


def significant_figures(approx: np.ndarray, exact: np.ndarray, floor: float) -> np.ndarray:
    """``-log10`` of the relative error, with the denominator floored at ``floor``."""
    err = np.abs(np.asarray(approx) - np.asarray(exact))
    den = np.maximum(np.abs(exact), floor)
    with np.errstate(divide="ignore"):
        return np.where(err > 0, -np.log10(err / den), np.inf)


def cnot_report(p: ProblemDefinition, x_end: np.ndarray) -> dict:
    exact = diagonalize(p.h0, name="H0").eigenvalues
    x_end = np.sort(x_end)
    rng = float(exact[-1] - exact[0])
    tol = DEGENERACY_TOL * max(rng, 1e-300)
    sig = significant_figures(x_end, exact, 1e-2 * rng)
    return {
        "levels": [{"level": k + 1, "pechukas": float(a), "exact": float(b), "abs_error": float(abs(a - b)),
                    "significant_figures": float(s)} for k, (a, b, s) in enumerate(zip(x_end, exact, sig))],
        "min_significant_figures": float(np.min(sig)),
        "max_abs_error": float(np.max(np.abs(x_end - exact))),
        "degeneracy_tol": tol,
        "multiplicities_pechukas": degeneracy_multiplicities(x_end, tol),
        "multiplicities_exact": degeneracy_multiplicities(exact, tol),
        "significant_figure_floor": "denominator max(|exact|, 1e-2 * spectral range)",
    }


def cmd_cnot(cfg: RunConfig) -> str:
    hb = None
    if cfg["hb"]:
        try:
            hb = read_matrix(cfg["hb"])
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        if hb.dim != 16:
            raise ValidationError(f"{cfg['hb']}: CNOT bias must be 16x16, got {hb.dim}")
    p = cnot_problem(CnotConfig(cfg["epsilon"]), z=cfg["z"], hb=hb)
    traj = integrate(p, _initial(p, cfg["initial"]), cfg.integrator)
    rep = cnot_report(p, traj.final.x)
    rep.update({"epsilon": cfg["epsilon"], "z": p.z, "initial_conditions": cfg["initial"],
                "energy_drift": traj.metadata["energy_drift"], "momentum_drift": traj.metadata["momentum_drift"]})
    out = cfg.out_dir
    write_trajectory(traj, out / "trajectory.csv", {"problem": p.metadata})
    write_json(out / "cnot_report.json", rep)
    write_manifest(out, "cnot", cfg.manifest())
    same = rep["multiplicities_pechukas"] == rep["multiplicities_exact"]
    ok = rep["min_significant_figures"] >= cfg["min_sig_figs"] and same
    line = (f"cnot {'ok' if ok else 'FAILED'}: min_sig_figs={rep['min_significant_figures']:.2f} "
            f"max_abs_error={rep['max_abs_error']:.2e} multiplicities={'match' if same else 'differ'} out={out}")
    if not ok:
        raise ComputeFailure(line)
    return line


def _campaign_spec(cfg: RunConfig) -> CampaignSpec:
    dim = cfg["dim"]
    levels = cfg["levels"] or tuple(sorted({n for n in DEFAULT_LEVELS if n <= dim} | {1, (dim + 1) // 2, dim}))
    inv_t = cfg["inv_t"]
    if not inv_t or any(not t > 0 for t in inv_t):
        raise ValidationError("--inv-t values must be positive")
    try:
        return CampaignSpec.standard(
            dim, fluctuation_ratio=cfg["fluctuation_ratio"], z=cfg["z"], ensemble_kind=cfg["ensemble_kind"],
            hb_kind=cfg["hb_kind"], realizations=cfg["realizations"], sweep_times=tuple(1.0 / t for t in inv_t),
            normalization=cfg["normalization"], tracked_levels=levels, seed=cfg["seed"],
            reference_time=cfg["reference_time"], crossing_threshold=cfg["crossing_threshold"],
            crossing_reference_time=cfg["crossing_time"],
            integrator=IntegratorConfig(cfg["rel_tol"], cfg["abs_tol"], cfg["max_step"], dense_output_points=2),
        )
    except ValueError as exc:
        raise ValidationError(str(exc)) from None


def cmd_ensemble(cfg: RunConfig) -> str:
    spec = _campaign_spec(cfg)
    out = cfg.out_dir
    write_manifest(out, "ensemble", cfg.manifest(), {"campaign": spec.to_dict()})
    try:
        stats = run_campaign(spec, workers=cfg.workers, checkpoint_dir=out / "checkpoints")
    except CampaignError as exc:
        raise ComputeFailure(str(exc)) from None
    fits, errors = [], {}
    for n in spec.tracked_levels:
        try:
            fits.append(fit_survival(stats, n, cfg["fit_saturation"]))
        except ValueError as exc:
            errors[n] = str(exc)
    write_ensemble_outputs(stats, fits, out, spec.tracked_levels, errors)
    dev = {}
    for n in spec.tracked_levels:
        try:
            f = fit_deviation(stats, n)
            dev[str(n)] = {"gamma": f.gamma, "gamma_stderr": f.gamma_stderr, "residual": f.residual}
        except ValueError as exc:
            dev[str(n)] = {"error": str(exc)}
    write_json(out / "deviation_fits.json", dev)
    write_json(out / "statistics.json", {"realizations_completed": stats.realizations_completed,
                                         "failed": stats.failed, **stats.metadata})
    write_manifest(out, "ensemble", cfg.manifest(), {"campaign": spec.to_dict(),
                                                      "realizations_completed": stats.realizations_completed})
    g = " ".join(f"gamma[{f.level}]={f.gamma:.3f}" for f in fits)
    return f"ensemble ok: N={spec.ensemble.dim} realizations={stats.realizations_completed} {g} out={out}"


def cmd_kinetic(cfg: RunConfig) -> str:
    dim = cfg["dim"]
    spec = EnsembleSpec(dim, EnsembleKind.GUE, 0.1 * cfg["z"], BiasKind.RANDOM, cfg["seed"])
    p = sample_ensemble(spec, z=cfg["z"])
    s0 = initial_conditions_exact(p)
    lam_end = cfg["lam_end"]
    if not 0 <= lam_end < 1:
        raise ValidationError("--lam-end must lie in [0, 1)")
    gamma = cfg["gamma_mf"] if cfg["gamma_mf"] is not None else estimate_gamma([s0.l])
    try:
        kcfg = KineticConfig(gamma_mf=gamma, gamma_st=cfg["gamma_st"], pv_cutoff=cfg["pv_cutoff"],
                             cfl=cfg["cfl"], kappa=cfg["kappa"], collision_kernel=cfg["collision_kernel"])
    except ValueError as exc:
        raise ValidationError(str(exc)) from None
    xs, vs = [s0.x], [s0.v]
    direct = None
    if cfg["compare"]:
        traj = integrate(p, s0, cfg.integrator)
        x1, v1 = traj.positions(lam_end)[0], traj.velocities(lam_end)[0]
        xs.append(x1)
        vs.append(v1)
        direct = PechukasState(lam_end, x1, v1, np.zeros((dim, dim)))
    gx, gv = phase_grid(np.concatenate(xs), np.concatenate(vs), cfg["nx"], cfg["nv"])
    f0 = bin_state(s0, gx, gv, per_level=cfg["per_level"])
    f1, _ = evolve(f0, kcfg, lam_end)
    out = cfg.out_dir
    write_snapshot(f0, out, "kinetic_initial", kcfg)
    write_snapshot(f1, out, "kinetic_final", kcfg, full_grid=cfg["full_grid"])
    summary = {"gamma_mf": gamma, "spread_initial": f0.x_spread(), "spread_final": f1.x_spread(),
               "mass_initial": float(f0.mass().sum()), "mass_final": float(f1.mass().sum())}
    line = f"kinetic ok: N={dim} Gamma={gamma:.4g} spread {f0.x_spread():.4g} -> {f1.x_spread():.4g}"
    if direct is not None:
        d = bin_state(direct, gx, gv, per_level=False)
        summary["spread_direct"] = d.x_spread()
        summary["spread_rel_diff"] = f1.x_spread() / d.x_spread() - 1.0
        line += f" (direct {d.x_spread():.4g}, rel diff {summary['spread_rel_diff']:+.3f})"
    write_json(out / "kinetic_summary.json", summary)
    write_manifest(out, "kinetic", cfg.manifest(), {"kinetic": asdict(kcfg)})
    return line + f" out={out}"


def oracle_deviation(p: ProblemDefinition, cfg: IntegratorConfig, grid_points: int):
    """Max ``|x_integrated - x_oracle|`` over the oracle grid, relative to the spectral range."""
    oracle = track_spectrum_oracle(p, grid_points)
    traj = integrate(p, initial_conditions_exact(p), cfg)
    dev = np.abs(traj.positions(oracle.lam) - oracle.x)
    rng = float(np.max(oracle.x) - np.min(oracle.x))
    i, k = np.unravel_index(np.argmax(dev), dev.shape)
    return float(dev[i, k] / rng), int(k), float(oracle.lam[i])


def cmd_oracle_check(cfg: RunConfig) -> str:
    dim = cfg["dim"]
    if dim > 64:
        raise ValidationError("oracle-check requires --dim <= 64")
    worst = (-1.0, None, None, None)
    rows = []
    for k in range(cfg["count"]):
        seed = int(np.random.SeedSequence([cfg["seed"], k]).generate_state(1, np.uint64)[0])
        p = sample_ensemble(EnsembleSpec(dim, EnsembleKind.GUE, 0.1 * cfg["z"], BiasKind.RANDOM, seed), z=cfg["z"])
        if cfg["zero_h0"]:
            p = ProblemDefinition(HermitianMatrix(np.zeros((dim, dim))), p.hb, p.z, p.hbar, p.metadata)
        d, level, lam = oracle_deviation(p, cfg.integrator, cfg["grid_points"])
        rows.append({"seed": seed, "deviation": d, "level": level + 1, "lambda": lam})
        if d > worst[0]:
            worst = (d, seed, level + 1, lam)
    write_json(cfg.out_dir / "oracle_check.json", {"threshold": cfg["threshold"], "problems": rows})
    write_manifest(cfg.out_dir, "oracle-check", cfg.manifest())
    d, seed, level, lam = worst
    line = f"max deviation {d:.3e} x range (seed {seed}, level {level}, lambda {lam:.6g})"
    if not d < cfg["threshold"]:
        raise ComputeFailure(f"oracle-check FAILED: {line} exceeds {cfg['threshold']:.1e}")
    return f"oracle-check ok: {cfg['count']} problems, N={dim}, {line}"


COMMANDS = {
    "simulate": cmd_simulate,
    "cnot": cmd_cnot,
    "ensemble": cmd_ensemble,
    "kinetic": cmd_kinetic,
    "oracle-check": cmd_oracle_check,
}


def _setup_logging() -> None:
    level = os.environ.get("PECHUKAS_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    if level not in levels:
        log.warning("unknown PECHUKAS_LOG=%r, using warn", level)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_VALIDATION
    t0 = time.perf_counter()
    try:
        cfg = resolve(args)
        line = COMMANDS[args.command](cfg)
    except (ValidationError, DegeneracyError) as exc:
        print(f"error: validation: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ComputeFailure, IntegrationError, SingularityError, EigensolverError) as exc:
        print(f"error: compute: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    print(line)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
