"""Gaussian-ensemble campaigns: survival probabilities and their scaling.

One realization = one random ``(H0, Hb)``, one integration of the gas, and
then, for every sweep time T, Landau-Zener propagation over the same set of
gap minima (the gas equations contain no sweep rate, so the trajectory is
shared by all T).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats as sps

from .hamiltonian import (
    VARIANCE_CONVENTION,
    BiasKind,
    EnsembleKind,
    EnsembleSpec,
    ProblemDefinition,
    diagonalize,
    initial_conditions_exact,
    mean_spacing,
    sample_ensemble,
)
from .pechukas import IntegrationError, IntegratorConfig, SingularityError, integrate
from .transitions import SweepSpec, locate_gap_minima, propagate_occupations, with_probabilities

__all__ = [
    "DEFAULT_INV_T",
    "DEFAULT_LEVELS",
    "CampaignSpec",
    "CampaignError",
    "RealizationResult",
    "EnsembleStatistics",
    "ScalingFit",
    "apply_fig1b_normalization",
    "realization_seed",
    "run_realization",
    "run_campaign",
    "aggregate",
    "fit_power_law",
    "fit_survival",
    "fit_deviation",
]

log = logging.getLogger(__name__)

# default |dlam/dt| = 1/T grid of a campaign
DEFAULT_INV_T = (1e-3, 2.5e-3, 5e-3, 1e-2, 2.5e-2, 5e-2, 7.5e-2)
# default tracked levels for N = 50; other N keep those that exist
DEFAULT_LEVELS = (1, 2, 5, 10, 25, 40, 45, 49, 50)
MAX_FAILED_FRACTION = 0.05


class CampaignError(RuntimeError):
    pass


@dataclass(frozen=True)
class CampaignSpec:
    """Everything that defines a campaign; ``tracked_levels`` are 1-based.

    ``ensemble.seed`` is ignored: realization ``i`` draws from
    :func:`realization_seed` ``(seed, i)``. With ``normalization="fig1b"``
    every realization is rescaled so that the mean level spacing of H0 equals
    ``hbar / reference_time``.
    """

    ensemble: EnsembleSpec
    realizations: int = 100
    sweep_times: tuple[float, ...] = tuple(1.0 / v for v in DEFAULT_INV_T)
    z: float = 10.0
    normalization: str = "fig1b"
    tracked_levels: tuple[int, ...] = ()
    seed: int = 0
    reference_time: float = 1.0
    crossing_threshold: float = 1e-3
    crossing_reference_time: float | None = None
    integrator: IntegratorConfig = IntegratorConfig(dense_output_points=2)

    def __post_init__(self):
        object.__setattr__(self, "sweep_times", tuple(float(t) for t in self.sweep_times))
        object.__setattr__(self, "tracked_levels", tuple(int(n) for n in self.tracked_levels))
        if self.realizations < 1:
            raise ValueError("realizations must be >= 1")
        if not self.sweep_times or any(not t > 0 for t in self.sweep_times):
            raise ValueError("sweep_times must be a nonempty list of positive values")
        if self.normalization not in ("fig1b", "raw"):
            raise ValueError(f"normalization must be 'fig1b' or 'raw', got {self.normalization!r}")
        if not self.z > 0:
            raise ValueError("z must be positive")
        if not self.reference_time > 0:
            raise ValueError("reference_time must be positive")
        bad = [n for n in self.tracked_levels if not 1 <= n <= self.ensemble.dim]
        if bad:
            raise ValueError(f"tracked levels {bad} outside 1..{self.ensemble.dim}")

    @classmethod
    def standard(cls, dim: int = 50, fluctuation_ratio: float = 0.1, z: float = 10.0,
                 ensemble_kind: str = "GUE", hb_kind: str = "random-same-ensemble", **kw) -> "CampaignSpec":
        """H0 off-diagonal r.m.s. = ``fluctuation_ratio`` x mean spacing of ``Z Hb`` (which is Z)."""
        ens = EnsembleSpec(dim, EnsembleKind(ensemble_kind), fluctuation_ratio * z, BiasKind(hb_kind), 0)
        return cls(ensemble=ens, z=z, **kw)

    @property
    def reference_crossing_time(self) -> float:
        if self.crossing_reference_time is not None:
            return self.crossing_reference_time
        ts = sorted(self.sweep_times)
        return ts[len(ts) // 2]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ensemble"]["ensemble_kind"] = self.ensemble.ensemble_kind.value
        d["ensemble"]["hb_kind"] = self.ensemble.hb_kind.value
        d["integrator"]["l_checkpoints"] = list(self.integrator.l_checkpoints)
        d["sweep_times"] = list(self.sweep_times)
        d["tracked_levels"] = list(self.tracked_levels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CampaignSpec":
        d = dict(d)
        d["ensemble"] = EnsembleSpec(**d["ensemble"])
        integ = dict(d.get("integrator", {}))
        integ["l_checkpoints"] = tuple(integ.get("l_checkpoints", ()))
        d["integrator"] = IntegratorConfig(**integ)
        d["sweep_times"] = tuple(d["sweep_times"])
        d["tracked_levels"] = tuple(d.get("tracked_levels", ()))
        return cls(**d)


def realization_seed(seed: int, index: int) -> int:
    """Schedule-independent 64-bit seed for realization ``index``."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def apply_fig1b_normalization(p: ProblemDefinition, sweep: SweepSpec) -> ProblemDefinition:
    """Rescale all energies so the mean level spacing of H0 is ``hbar / T``.

    The applied factor is accumulated in ``metadata["energy_rescale"]``.
    """
    e = diagonalize(p.h0, name="H0").eigenvalues
    s = mean_spacing(e)
    if not s > 0:
        raise ValueError("H0 has a fully degenerate spectrum; mean spacing is zero")
    target = sweep.hbar / sweep.total_time
    factor = target / s
    out = p.rescaled(factor)
    out = replace(out, hbar=sweep.hbar)
    return out


@dataclass
class RealizationResult:
    index: int
    seed: int
    ok: bool
    occupations: np.ndarray | None = None  # (n_T, N, N), [t, m, n] = P(m|n)
    crossing_counts: np.ndarray | None = None  # (N,)
    n_events: int = 0
    info: dict = field(default_factory=dict)

    def save(self, path: Path) -> None:
        np.savez(
            path,
            index=self.index, seed=self.seed, ok=self.ok,
            occupations=self.occupations if self.ok else np.empty(0),
            crossing_counts=self.crossing_counts if self.ok else np.empty(0),
            n_events=self.n_events, info=json.dumps(self.info),
        )

    @classmethod
    def load(cls, path: Path) -> "RealizationResult":
        with np.load(path) as z:
            ok = bool(z["ok"])
            return cls(
                index=int(z["index"]), seed=int(z["seed"]), ok=ok,
                occupations=z["occupations"] if ok else None,
                crossing_counts=z["crossing_counts"] if ok else None,
                n_events=int(z["n_events"]), info=json.loads(str(z["info"])),
            )


def _problem_for(spec: CampaignSpec, seed: int) -> ProblemDefinition:
    p = sample_ensemble(replace(spec.ensemble, seed=seed), z=spec.z)
    if spec.normalization == "fig1b":
        p = apply_fig1b_normalization(p, SweepSpec(spec.reference_time, p.hbar))
    return p


def run_realization(spec: CampaignSpec, index: int) -> RealizationResult:
    seed = realization_seed(spec.seed, index)
    n = spec.ensemble.dim
    try:
        p = _problem_for(spec, seed)
        traj = integrate(p, initial_conditions_exact(p), spec.integrator)
    except (IntegrationError, SingularityError, ValueError) as exc:
        log.warning("realization %d (seed %d) failed: %s", index, seed, exc)
        return RealizationResult(index, seed, False, info={"error": str(exc)})
    minima = locate_gap_minima(traj)
    occ = np.empty((len(spec.sweep_times), n, n))
    for k, t in enumerate(spec.sweep_times):
        occ[k] = propagate_occupations(with_probabilities(minima, SweepSpec(t, p.hbar)), n).p
    counts = np.zeros(n)
    for e in with_probabilities(minima, SweepSpec(spec.reference_crossing_time, p.hbar)):
        if e.p_lz > spec.crossing_threshold:
            counts[e.pair] += 1
            counts[e.pair + 1] += 1
    info = {
        "energy_rescale": p.metadata.get("energy_rescale", 1.0),
        "accepted_steps": traj.metadata["accepted_steps"],
        "energy_drift": traj.metadata["energy_drift"],
        "momentum_drift": traj.metadata["momentum_drift"],
        "antihermitian_defect": traj.metadata["antihermitian_defect"],
        "near_degenerate_events": sum(e.near_degenerate for e in minima),
    }
    return RealizationResult(index, seed, True, occ, counts, len(minima), info)


@dataclass(frozen=True)
class ScalingFit:
    level: int
    gamma: float
    amplitude: float
    fit_window: tuple[float, float]
    residual: float
    gamma_stderr: float = float("nan")
    n_points: int = 0


@dataclass(eq=False)
class EnsembleStatistics:
    """Realization averages; level axes are 0-based arrays, T axis follows ``sweep_times``."""

    sweep_times: np.ndarray
    survival: np.ndarray  # (n_T, N) mean P(n|n)
    survival_stderr: np.ndarray  # (n_T, N)
    deviation: np.ndarray  # (n_T, N) mean <(n - n0)^2> for start level n0
    final_distribution: np.ndarray  # (n_T, N, N) mean P(n|n0), [t, n, n0]
    crossing_counts: np.ndarray  # (N,)
    realizations_completed: int
    failed: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.survival.shape[1]

    def survival_points(self, level: int) -> np.ndarray:
        """``(T, P(n|n))`` rows for 1-based ``level``, sorted by T."""
        order = np.argsort(self.sweep_times)
        return np.column_stack([self.sweep_times[order], self.survival[order, level - 1]])

    def deviation_points(self, level: int) -> np.ndarray:
        order = np.argsort(self.sweep_times)
        return np.column_stack([self.sweep_times[order], self.deviation[order, level - 1]])


def aggregate(spec: CampaignSpec, results: Sequence[RealizationResult]) -> EnsembleStatistics:
    results = sorted(results, key=lambda r: r.index)
    good = [r for r in results if r.ok]
    failed = [{"index": r.index, "seed": r.seed, "error": r.info.get("error", "")} for r in results if not r.ok]
    if not good:
        raise CampaignError("no realization completed")
    occ = np.stack([r.occupations for r in good])  # (R, n_T, N, N)
    n = occ.shape[-1]
    diag = np.diagonal(occ, axis1=2, axis2=3)  # (R, n_T, N)
    r = len(good)
    surv = diag.mean(axis=0)
    surv_se = diag.std(axis=0, ddof=1) / np.sqrt(r) if r > 1 else np.zeros_like(surv)
    idx = np.arange(n)
    d2 = (idx[:, None] - idx[None, :]) ** 2  # [n, n0]
    dev = np.einsum("rtmn,mn->tn", occ, d2) / r
    counts = np.mean([g.crossing_counts for g in good], axis=0)
    meta = {
        "realizations_requested": spec.realizations,
        "mean_events": float(np.mean([g.n_events for g in good])),
        "max_energy_drift": float(max(g.info.get("energy_drift", 0.0) for g in good)),
        "max_momentum_drift": float(max(g.info.get("momentum_drift", 0.0) for g in good)),
        "max_antihermitian_defect": float(max(g.info.get("antihermitian_defect", 0.0) for g in good)),
        "crossing_count_rule": {
            "threshold": spec.crossing_threshold,
            "reference_time": spec.reference_crossing_time,
        },
        "tie_breaking": "simultaneous events applied in ascending pair index",
        "propagation": "deterministic transfer matrices",
        "variance_convention": VARIANCE_CONVENTION,
    }
    return EnsembleStatistics(
        sweep_times=np.array(spec.sweep_times), survival=surv, survival_stderr=surv_se,
        deviation=dev, final_distribution=occ.mean(axis=0), crossing_counts=counts,
        realizations_completed=r, failed=failed, metadata=meta,
    )


def _check_failures(n_failed: int, total: int) -> None:
    if n_failed > MAX_FAILED_FRACTION * total:
        raise CampaignError(f"{n_failed} of {total} realizations failed (limit {MAX_FAILED_FRACTION:.0%})")


def _checkpoint_path(directory: Path, index: int) -> Path:
    return directory / f"realization_{index:05d}.npz"


def _run_indexed(args):
    spec, index = args
    return run_realization(spec, index)


def run_campaign(spec: CampaignSpec, workers: int = 1, checkpoint_dir: str | Path | None = None,
                 stop_after: int | None = None) -> EnsembleStatistics:
    """Run (or resume) a campaign.

    With ``checkpoint_dir`` every finished realization is written to disk and
    skipped on the next call. ``stop_after`` computes at most that many new
    realizations and then raises ``KeyboardInterrupt`` (used to exercise
    resumption).
    """
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    results: dict[int, RealizationResult] = {}
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
        stamp = ckpt / "campaign.json"
        spec_json = json.dumps(spec.to_dict(), sort_keys=True)
        if stamp.exists():
            if json.loads(stamp.read_text()) != json.loads(spec_json):
                raise CampaignError(f"{ckpt} holds checkpoints of a different campaign")
        else:
            stamp.write_text(spec_json)
        for i in range(spec.realizations):
            path = _checkpoint_path(ckpt, i)
            if path.exists():
                results[i] = RealizationResult.load(path)
        if results:
            log.info("resuming: %d of %d realizations already done", len(results), spec.realizations)

    todo = [i for i in range(spec.realizations) if i not in results]
    if stop_after is not None:
        todo_now = todo[:stop_after]
    else:
        todo_now = todo

    def record(res: RealizationResult) -> None:
        results[res.index] = res
        if ckpt is not None:
            res.save(_checkpoint_path(ckpt, res.index))
        _check_failures(sum(not r.ok for r in results.values()), spec.realizations)

    if workers > 1 and len(todo_now) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for res in pool.map(_run_indexed, [(spec, i) for i in todo_now]):
                record(res)
    else:
        for i in todo_now:
            record(run_realization(spec, i))
            log.info("realization %d done", i)
    if stop_after is not None and len(todo_now) < len(todo):
        raise KeyboardInterrupt(f"stopped after {len(todo_now)} new realizations")
    return aggregate(spec, list(results.values()))


# --------------------------------------------------------------------------
# power laws

def fit_power_law(points, window: tuple[float, float] | None = None, level: int = 0) -> ScalingFit:
    """Least-squares line through ``(log T, log value)`` for T inside ``window``.

    Raises:
        ValueError: fewer than 4 points in the window, or a non-positive value.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an array of (T, value) rows")
    if window is None:
        window = (float(pts[:, 0].min()), float(pts[:, 0].max()))
    lo, hi = window
    sel = pts[(pts[:, 0] >= lo) & (pts[:, 0] <= hi)]
    if len(sel) < 4:
        raise ValueError(f"need at least 4 points in window {window}, got {len(sel)}")
    if np.any(sel[:, 1] <= 0) or np.any(sel[:, 0] <= 0):
        raise ValueError(f"non-positive values inside window {window}; exclude saturated/empty points")
    lx, ly = np.log(sel[:, 0]), np.log(sel[:, 1])
    res = sps.linregress(lx, ly)
    resid = ly - (res.intercept + res.slope * lx)
    return ScalingFit(
        level=level, gamma=float(res.slope), amplitude=float(np.exp(res.intercept)),
        fit_window=(float(lo), float(hi)), residual=float(np.sqrt(np.mean(resid**2))),
        gamma_stderr=float(res.stderr), n_points=len(sel),
    )


def _unsaturated_window(points: np.ndarray, saturation: float) -> tuple[float, float]:
    # contiguous run from the fastest sweep up to the first saturated point
    keep = []
    for t, val in points:
        if val > saturation or val <= 0:
            break
        keep.append(t)
    if not keep:
        return (float(points[0, 0]), float(points[0, 0]))
    return (float(keep[0]), float(keep[-1]))


def fit_survival(stats: EnsembleStatistics, level: int, saturation: float = 0.9) -> ScalingFit:
    """Fit ``P(n|n) ~ T^gamma`` for 1-based ``level``, dropping the saturated tail (P > saturation)."""
    pts = stats.survival_points(level)
    return fit_power_law(pts, _unsaturated_window(pts, saturation), level=level)


def fit_deviation(stats: EnsembleStatistics, level: int) -> ScalingFit:
    pts = stats.deviation_points(level)
    pos = pts[pts[:, 1] > 0]
    if len(pos) < 4:
        raise ValueError(f"level {level}: fewer than 4 positive deviation points")
    return fit_power_law(pos, (float(pos[0, 0]), float(pos[-1, 0])), level=level)
