"""Plain-text artifacts: trajectory/event/occupation CSVs, ensemble tables, manifests.

Numbers are written with ``repr(float)`` so files are locale independent and
round-trip exactly.
"""

from __future__ import annotations

import csv
import json
import platform
import sys
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import __version__
from .ensemble import EnsembleStatistics, ScalingFit
from .pechukas import Trajectory
from .transitions import AnticrossingEvent, OccupationMatrix

__all__ = [
    "to_jsonable",
    "write_json",
    "write_trajectory",
    "read_trajectory",
    "write_events",
    "read_events",
    "write_occupations",
    "read_occupations",
    "write_ensemble_outputs",
    "write_manifest",
]

EVENT_COLUMNS = ("pair", "lambda_star", "delta_min", "coupling", "p_lz")


def _fmt(x) -> str:
    return repr(float(x))


def to_jsonable(obj):
    """Recursively convert dataclasses, enums and numpy values for ``json``."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return to_jsonable(asdict(obj))
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def write_json(path: str | Path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(to_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def write_trajectory(traj: Trajectory, path: str | Path, extra: dict | None = None) -> tuple[Path, Path]:
    """Dense samples as ``lambda,x_1..x_N`` plus a ``.json`` sidecar with the run metadata."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lambda"] + [f"x_{k + 1}" for k in range(traj.n)])
        for lam, row in zip(traj.lam, traj.x):
            w.writerow([_fmt(lam)] + [_fmt(v) for v in row])
    meta = dict(traj.metadata)
    if extra:
        meta.update(extra)
    side = path.with_suffix(".json")
    write_json(side, meta)
    return path, side


def read_trajectory(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(lam, x)`` from a trajectory CSV."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 0], data[:, 1:]


def write_events(events: Iterable[AnticrossingEvent], path: str | Path) -> Path:
    """Event list; ``pair`` is the 1-based index of the lower level."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EVENT_COLUMNS)
        for e in events:
            w.writerow([e.pair + 1, _fmt(e.lambda_star), _fmt(e.delta_min), _fmt(e.coupling), _fmt(e.p_lz)])
    return path


def read_events(path: str | Path) -> list[AnticrossingEvent]:
    with Path(path).open(newline="") as fh:
        r = csv.DictReader(fh)
        return [AnticrossingEvent(int(row["pair"]) - 1, float(row["lambda_star"]), float(row["delta_min"]),
                                  float(row["coupling"]), float(row["p_lz"])) for row in r]


def write_occupations(occ: OccupationMatrix, path: str | Path) -> Path:
    """N x N table, row = final level m, column = initial level n."""
    path = Path(path)
    n = occ.n
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"from_{k + 1}" for k in range(n)])
        for row in occ.p:
            w.writerow([_fmt(v) for v in row])
    return path


def read_occupations(path: str | Path) -> OccupationMatrix:
    return OccupationMatrix(np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2))


def write_ensemble_outputs(stats: EnsembleStatistics, fits: Sequence[ScalingFit], out_dir: str | Path,
                           levels: Sequence[int] | None = None, fit_errors: dict | None = None) -> list[Path]:
    """survival.csv, deviation.csv, crossings.csv and fits.json; ``levels`` are 1-based."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lv = list(levels) if levels else list(range(1, stats.n + 1))
    order = np.argsort(1.0 / stats.sweep_times)
    paths = []

    p = out / "survival.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "inv_T", "mean", "stderr"])
        for n in lv:
            for k in order:
                w.writerow([n, _fmt(1.0 / stats.sweep_times[k]), _fmt(stats.survival[k, n - 1]),
                            _fmt(stats.survival_stderr[k, n - 1])])
    paths.append(p)

    p = out / "deviation.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n0", "inv_T", "msd"])
        for n in lv:
            for k in order:
                w.writerow([n, _fmt(1.0 / stats.sweep_times[k]), _fmt(stats.deviation[k, n - 1])])
    paths.append(p)

    p = out / "crossings.csv"
    with p.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["level", "mean_count"])
        for n, c in enumerate(stats.crossing_counts, start=1):
            w.writerow([n, _fmt(c)])
    paths.append(p)

    fit_json = {
        str(f.level): {"gamma": f.gamma, "gamma_stderr": f.gamma_stderr, "amplitude": f.amplitude,
                       "residual": f.residual, "window": list(f.fit_window), "n_points": f.n_points}
        for f in fits
    }
    for lvl, msg in (fit_errors or {}).items():
        fit_json[str(lvl)] = {"error": msg}
    paths.append(write_json(out / "fits.json", fit_json))
    return paths


def write_manifest(out_dir: str | Path, command: str, config: dict, extra: dict | None = None) -> Path:
    """Everything needed to rerun: configs, seeds, decision constants, versions."""
    import scipy

    from . import ensemble, hamiltonian, transitions

    data = {
        "command": command,
        "package_version": __version__,
        "python": sys.version.split()[0],
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
        "config": config,
        "constants": {
            "degeneracy_tol": hamiltonian.DEGENERACY_TOL,
            "l_cutoff": hamiltonian.L_CUTOFF,
            "hermitian_file_tol": hamiltonian.HERMITIAN_FILE_TOL,
            "variance_convention": hamiltonian.VARIANCE_CONVENTION,
            "gap_min_lambda_tol": transitions.LAMBDA_TOL,
            "near_degenerate_rel": transitions.NEAR_DEGENERATE_REL,
            "max_failed_fraction": ensemble.MAX_FAILED_FRACTION,
            "tie_breaking": "simultaneous events in ascending pair index",
            "propagation": "deterministic transfer matrices",
            "integrator": "Dormand-Prince 5(4), PI step control, cubic Hermite dense output",
            "landing": "final step clamped to lambda = 0",
        },
    }
    if extra:
        data.update(extra)
    return write_json(Path(out_dir) / "manifest.json", data)
