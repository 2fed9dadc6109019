"""Mean-field kinetic description of the level gas (experimental).

The one-particle distribution ``f(n, x, v)`` obeys

    df/dlam + v df/dx + F(x) df/dv = I_St,
    F(x) = 2 Gamma PV sum_m int dy du f(y, u, m) / (x - y)**3,

with ``Gamma`` the mean squared off-diagonal ``|l|``. Streaming and kicks
are done semi-Lagrangian on the cumulative mass (monotone cubic
interpolation), so mass per label is conserved to roundoff and ``f`` stays
non-negative. The collision term uses a phenomenological exchange kernel
``p(w) = exp(-kappa / |w|)``, weighted by the encounter rate ``|w|`` by default
(``collision_kernel="abs"``) or by the signed ``w`` (``"signed"``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from .pechukas import PechukasState

__all__ = [
    "CFLError",
    "PhaseSpaceDistribution",
    "KineticConfig",
    "phase_grid",
    "bin_state",
    "estimate_gamma",
    "mean_field_force",
    "collision_integral",
    "admissible_step",
    "step_kinetic",
    "evolve",
    "write_snapshot",
]


class CFLError(ValueError):
    def __init__(self, dlam: float, admissible: float):
        super().__init__(f"|dlam|={abs(dlam):.3e} violates the CFL bound; admissible |dlam| <= {admissible:.3e}")
        self.dlam = dlam
        self.admissible = admissible


def _check_uniform(g: np.ndarray, name: str) -> float:
    if g.ndim != 1 or len(g) < 2:
        raise ValueError(f"{name} must be a 1-D array with at least 2 points")
    d = np.diff(g)
    h = float(d.mean())
    if not h > 0 or np.max(np.abs(d - h)) > 1e-9 * h:
        raise ValueError(f"{name} must be uniform and increasing")
    return h


@dataclass(eq=False)
class PhaseSpaceDistribution:
    """Cell-centred ``f[n, ix, iv]`` on uniform grids; cell measure ``dx * dv``."""

    grid_x: np.ndarray
    grid_v: np.ndarray
    f: np.ndarray
    lam: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid_x = np.asarray(self.grid_x, float)
        self.grid_v = np.asarray(self.grid_v, float)
        self.f = np.asarray(self.f, float)
        self._dx = _check_uniform(self.grid_x, "grid_x")
        self._dv = _check_uniform(self.grid_v, "grid_v")
        if self.f.ndim != 3 or self.f.shape[1:] != (len(self.grid_x), len(self.grid_v)):
            raise ValueError(f"f must have shape (labels, {len(self.grid_x)}, {len(self.grid_v)}), got {self.f.shape}")
        if np.any(self.f < 0):
            raise ValueError("f must be non-negative")

    @property
    def dx(self) -> float:
        return self._dx

    @property
    def dv(self) -> float:
        return self._dv

    @property
    def labels(self) -> int:
        return self.f.shape[0]

    def mass(self) -> np.ndarray:
        """Per-label ``int f dx dv``."""
        return self.f.sum(axis=(1, 2)) * self.dx * self.dv

    def density(self) -> np.ndarray:
        """Particle density in x, summed over labels."""
        return self.f.sum(axis=(0, 2)) * self.dv

    def momentum(self) -> float:
        return float(np.einsum("nxv,v->", self.f, self.grid_v) * self.dx * self.dv)

    def x_spread(self) -> float:
        """R.m.s. width of the x marginal."""
        rho = self.density()
        w = rho / rho.sum()
        mu = w @ self.grid_x
        return float(np.sqrt(w @ (self.grid_x - mu) ** 2))

    def copy(self, f: np.ndarray | None = None, lam: float | None = None) -> "PhaseSpaceDistribution":
        return PhaseSpaceDistribution(self.grid_x, self.grid_v, self.f.copy() if f is None else f,
                                      self.lam if lam is None else lam, dict(self.meta))


@dataclass(frozen=True)
class KineticConfig:
    gamma_mf: float = 0.0
    gamma_st: float = 0.0
    pv_cutoff: float = 2.0  # cells
    cfl: float = 0.4
    kappa: float = 1.0  # exchange kernel p(w) = exp(-kappa/|w|)
    collision_kernel: str = "abs"  # weight |u - v| ("abs") or u - v ("signed")

    def __post_init__(self):
        if self.gamma_mf < 0:
            raise ValueError("gamma_mf must be >= 0")
        if self.gamma_st < 0:
            raise ValueError("gamma_st must be >= 0")
        if self.pv_cutoff < 1:
            raise ValueError("pv_cutoff must be at least one cell")
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.collision_kernel not in ("abs", "signed"):
            raise ValueError(f"collision_kernel must be 'abs' or 'signed', got {self.collision_kernel!r}")


def phase_grid(x: np.ndarray, v: np.ndarray, nx: int = 256, nv: int = 128, pad: float = 0.25):
    """Uniform cell centres covering the points ``x``, ``v`` with a relative margin ``pad``."""

    def axis(a, n):
        lo, hi = float(np.min(a)), float(np.max(a))
        w = max(hi - lo, 1e-12 * max(abs(lo), abs(hi), 1.0))
        lo, hi = lo - pad * w, hi + pad * w
        h = (hi - lo) / n
        return lo + h * (np.arange(n) + 0.5)

    return axis(x, nx), axis(v, nv)


def _cic(points: np.ndarray, grid: np.ndarray, h: float):
    # cloud-in-cell weights onto cell centres
    s = (points - grid[0]) / h
    i0 = np.clip(np.floor(s).astype(int), 0, len(grid) - 2)
    w1 = np.clip(s - i0, 0.0, 1.0)
    return i0, 1.0 - w1, w1


def bin_state(state: PechukasState, grid_x: np.ndarray, grid_v: np.ndarray, per_level: bool = True) -> PhaseSpaceDistribution:
    """Empirical distribution of a gas configuration, unit mass per particle.

    With ``per_level`` every particle gets its own label, otherwise all
    particles share label 0.
    """
    grid_x = np.asarray(grid_x, float)
    grid_v = np.asarray(grid_v, float)
    dx = _check_uniform(grid_x, "grid_x")
    dv = _check_uniform(grid_v, "grid_v")
    n = state.n
    f = np.zeros((n if per_level else 1, len(grid_x), len(grid_v)))
    ix, ax0, ax1 = _cic(np.asarray(state.x, float), grid_x, dx)
    iv, av0, av1 = _cic(np.asarray(state.v, float), grid_v, dv)
    lab = np.arange(n) if per_level else np.zeros(n, int)
    for wx, ox in ((ax0, 0), (ax1, 1)):
        for wv, ov in ((av0, 0), (av1, 1)):
            np.add.at(f, (lab, ix + ox, iv + ov), wx * wv)
    f /= dx * dv
    return PhaseSpaceDistribution(grid_x, grid_v, f, lam=float(state.lam), meta={"source": "binned gas state", "n": n})


def estimate_gamma(l_samples: Sequence[np.ndarray]) -> float:
    """Mean ``|l_jk|^2`` over all off-diagonal entries of all samples."""
    samples = [np.asarray(l) for l in l_samples]
    if not samples:
        raise ValueError("estimate_gamma needs at least one l matrix")
    tot, cnt = 0.0, 0
    for l in samples:
        if l.ndim != 2 or l.shape[0] != l.shape[1] or l.shape[0] < 2:
            raise ValueError(f"l samples must be square matrices of size >= 2, got shape {l.shape}")
        a = np.abs(l) ** 2
        tot += a.sum() - np.trace(a)
        cnt += l.shape[0] * (l.shape[0] - 1)
    return float(tot / cnt)


def _pv_kernel(nx: int, dx: float, cutoff_cells: float) -> np.ndarray:
    r = np.arange(-(nx - 1), nx) * dx
    k = np.zeros_like(r)
    far = np.abs(r) >= cutoff_cells * dx - 1e-12 * dx
    k[far] = 1.0 / r[far] ** 3
    return k


def mean_field_force(f: PhaseSpaceDistribution, cfg: KineticConfig) -> np.ndarray:
    """``2 Gamma PV int rho(y) / (x - y)**3 dy`` at every x cell; positive = towards larger x."""
    nx = len(f.grid_x)
    if cfg.gamma_mf == 0:
        return np.zeros(nx)
    rho = f.density()
    k = _pv_kernel(nx, f.dx, cfg.pv_cutoff)
    conv = np.convolve(rho, k, mode="full")[nx - 1: 2 * nx - 1]
    return 2.0 * cfg.gamma_mf * conv * f.dx


def _exchange_kernel(grid_v: np.ndarray, kappa: float, signed: bool = False) -> np.ndarray:
    w = grid_v[None, :] - grid_v[:, None]  # [v, u] -> u - v
    aw = np.abs(w)
    p = np.zeros_like(w)
    nz = aw > 0
    p[nz] = np.exp(-kappa / aw[nz])
    return (w if signed else aw) * p


def _collision_rate(f: PhaseSpaceDistribution, cfg: KineticConfig) -> float:
    """Largest per-unit-lam loss rate ``2 Gamma_St (K S)(x, v)``."""
    k = _exchange_kernel(f.grid_v, cfg.kappa) * f.dv
    return float(2.0 * cfg.gamma_st * np.max(f.f.sum(axis=0) @ k.T))


def collision_integral(f: PhaseSpaceDistribution, cfg: KineticConfig) -> np.ndarray:
    """Population exchange between labels at fixed x.

    ``I[n] = 2 Gamma_St sum_m int du W(u - v) [f_m(v) f_n(u) - f_n(v) f_m(u)]`` with
    ``W(w) = |w| p(w)`` (or ``w p(w)`` for the signed kernel). Vanishes when all
    labels carry the same f, and sums to zero over labels. With ``|w|`` the gain
    term is non-negative and the loss term is proportional to ``f_n``.
    """
    if cfg.gamma_st == 0:
        return np.zeros_like(f.f)
    k = _exchange_kernel(f.grid_v, cfg.kappa, cfg.collision_kernel == "signed") * f.dv
    g = f.f @ k.T  # (K f_n)(x, v) = sum_u k[v, u] f_n(x, u)
    s = f.f.sum(axis=0)
    ks = s @ k.T
    return 2.0 * cfg.gamma_st * (s[None] * g - f.f * ks[None])


def _remap(values: np.ndarray, shift: np.ndarray, h: float) -> np.ndarray:
    """Conservative semi-Lagrangian shift along the last axis.

    ``values[..., r, :]`` is moved by ``shift[r]`` (length units, not cells)
    by interpolating the cumulative mass with a monotone cubic and
    differencing. Mass leaving the grid is lost; nothing flows in.
    """
    n = values.shape[-1]
    edges = np.arange(n + 1) * h
    cum = np.concatenate([np.zeros(values.shape[:-1] + (1,)), np.cumsum(values, axis=-1) * h], axis=-1)
    # one interpolant for all rows; evaluated through its polynomial pieces
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):  # flat segments
        pp = PchipInterpolator(edges, cum, axis=-1)
    c = pp.c  # (4, n, *values.shape[:-1])
    q = np.clip(edges[None, :] - np.asarray(shift, float)[:, None], 0.0, edges[-1])  # (rows, n+1)
    idx = np.minimum((q / h).astype(int), n - 1)
    t = q - edges[idx]
    rows = np.arange(q.shape[0])[:, None]
    cr = np.moveaxis(c, (1, -1), (-2, -1))  # (4, ..., n, rows)
    coef = cr[..., idx, rows]  # (4, ..., rows, n+1)
    val = ((coef[0] * t + coef[1]) * t + coef[2]) * t + coef[3]
    return np.maximum(np.diff(val, axis=-1), 0.0) / h


def _stream(f: np.ndarray, grid_v: np.ndarray, dx: float, dlam: float) -> np.ndarray:
    # rows are v, shifted along x: (n, x, v) -> (n, v, x)
    g = np.swapaxes(f, 1, 2)
    return np.swapaxes(_remap(g, grid_v * dlam, dx), 1, 2)


def _kick(f: np.ndarray, force: np.ndarray, dv: float, dlam: float) -> np.ndarray:
    return _remap(f, force * dlam, dv)


def admissible_step(f: PhaseSpaceDistribution, cfg: KineticConfig, force: np.ndarray | None = None) -> float:
    """Largest ``|dlam|`` with streaming and kick displacements below ``cfl`` cells.

    With collisions, ``|dlam|`` times the largest loss rate is also kept below ``cfl``.
    """
    if force is None:
        force = mean_field_force(f, cfg)
    vmax = float(np.max(np.abs(f.grid_v)))
    fmax = float(np.max(np.abs(force)))
    bounds = [cfg.cfl * f.dx / vmax if vmax > 0 else math.inf,
              cfg.cfl * f.dv / fmax if fmax > 0 else math.inf]
    if cfg.gamma_st > 0:
        rate = _collision_rate(f, cfg)
        bounds.append(cfg.cfl / rate if rate > 0 else math.inf)
    return min(bounds)


def step_kinetic(f: PhaseSpaceDistribution, cfg: KineticConfig, dlam: float) -> PhaseSpaceDistribution:
    """One Strang step: half stream, kick, half stream, then the collision update.

    ``dlam`` may be negative (the physical sweep runs from lam = 1 to 0). The
    collision update always advances along the sweep, i.e. uses ``|dlam|``.

    Raises:
        CFLError: ``|dlam|`` exceeds :func:`admissible_step`.
    """
    force0 = mean_field_force(f, cfg)
    adm = admissible_step(f, cfg, force0)
    if abs(dlam) > adm * (1 + 1e-12):
        raise CFLError(dlam, adm)
    g = _stream(f.f, f.grid_v, f.dx, 0.5 * dlam)
    half = f.copy(f=g)
    g = _kick(g, mean_field_force(half, cfg), f.dv, dlam)
    g = _stream(g, f.grid_v, f.dx, 0.5 * dlam)
    out = f.copy(f=g, lam=f.lam + dlam)
    if cfg.gamma_st > 0:
        upd = out.f + abs(dlam) * collision_integral(out, cfg)
        neg = np.minimum(upd, 0.0)
        if cfg.collision_kernel == "abs" and np.min(neg) < -1e-12 * np.max(out.f):
            # streaming moved mass into a faster-exchanging region
            raise CFLError(dlam, cfg.cfl / _collision_rate(out, cfg))
        out = out.copy(f=upd - neg)
        out.meta["experimental"] = "collision term with phenomenological exchange kernel"
        if cfg.collision_kernel == "signed":
            out.meta["collision_clipped_mass"] = out.meta.get("collision_clipped_mass", 0.0) - float(neg.sum() * f.dx * f.dv)
    return out


def evolve(f: PhaseSpaceDistribution, cfg: KineticConfig, lam_end: float, max_dlam: float | None = None,
           snapshots: Sequence[float] = ()) -> tuple[PhaseSpaceDistribution, list[PhaseSpaceDistribution]]:
    """Step from ``f.lam`` to ``lam_end`` with CFL-limited steps.

    Without collisions, the trailing half stream of one Strang step and the
    leading half stream of the next are applied as a single remap. This is
    the same splitting, with half the interpolation passes (and half the
    numerical diffusion). The state is synchronized at ``lam_end`` and at
    every snapshot.

    Returns the final distribution and copies taken when passing each value
    in ``snapshots``.
    """
    sign = 1.0 if lam_end >= f.lam else -1.0
    pending = sorted((s for s in snapshots if sign * (s - f.lam) > 0 and sign * (lam_end - s) >= 0),
                     key=lambda s: sign * s)
    taken = []

    def choose(lam: float, adm: float) -> float:
        h = 0.999 * adm
        if max_dlam is not None:
            h = min(h, max_dlam)
        h = min(h, abs(lam_end - lam))
        if pending:
            h = min(h, max(abs(pending[0] - lam), 1e-15))
        return h

    def synchronized(lam: float) -> bool:
        return abs(lam_end - lam) <= 1e-14 or bool(pending and abs(pending[0] - lam) <= 1e-14)

    cur = f
    while sign * (lam_end - cur.lam) > 1e-14:
        if cfg.gamma_st > 0:
            cur = step_kinetic(cur, cfg, sign * choose(cur.lam, admissible_step(cur, cfg)))
        else:
            h = choose(cur.lam, admissible_step(cur, cfg))
            g = _stream(cur.f, f.grid_v, f.dx, 0.5 * sign * h)
            lam = cur.lam + sign * h
            while True:
                # the kick leaves the x density, hence the force, unchanged
                force = mean_field_force(cur.copy(f=g), cfg)
                g = _kick(g, force, f.dv, sign * h)
                if synchronized(lam):
                    g = _stream(g, f.grid_v, f.dx, 0.5 * sign * h)
                    break
                h_next = choose(lam, admissible_step(cur, cfg, force))
                g = _stream(g, f.grid_v, f.dx, 0.5 * sign * (h + h_next))
                h = h_next
                lam += sign * h
            cur = cur.copy(f=g, lam=lam)
        while pending and sign * (pending[0] - cur.lam) <= 1e-14:
            taken.append(cur.copy())
            pending.pop(0)
    return cur, taken


def write_snapshot(f: PhaseSpaceDistribution, out_dir: str | Path, stem: str = "kinetic",
                   cfg: KineticConfig | None = None, full_grid: bool = False) -> list[Path]:
    """Write x/v marginals as CSV plus a JSON sidecar; optionally the full grid."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    px = out_dir / f"{stem}_marginal_x.csv"
    with px.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x"] + [f"rho_{n + 1}" for n in range(f.labels)] + ["rho_total"])
        per = f.f.sum(axis=2) * f.dv
        for i, x in enumerate(f.grid_x):
            w.writerow([repr(float(x))] + [repr(float(r)) for r in per[:, i]] + [repr(float(per[:, i].sum()))])
    paths.append(px)
    pv = out_dir / f"{stem}_marginal_v.csv"
    with pv.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["v", "g_total"])
        g = f.f.sum(axis=(0, 1)) * f.dx
        for j, v in enumerate(f.grid_v):
            w.writerow([repr(float(v)), repr(float(g[j]))])
    paths.append(pv)
    if full_grid:
        pf = out_dir / f"{stem}_grid.csv"
        idx = np.argwhere(f.f > 0)
        with pf.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "ix", "iv", "f"])
            for n, i, j in idx:
                w.writerow([int(n), int(i), int(j), repr(float(f.f[n, i, j]))])
        paths.append(pf)
    meta = {
        "lam": f.lam, "labels": f.labels, "nx": len(f.grid_x), "nv": len(f.grid_v),
        "dx": f.dx, "dv": f.dv, "mass": f.mass().tolist(), "momentum": f.momentum(),
        "x_spread": f.x_spread(), "config": asdict(cfg) if cfg is not None else None,
        "exchange_kernel": "p(w) = exp(-kappa/|w|), phenomenological",
        "collision_weight": "|u - v|" if cfg is None or cfg.collision_kernel == "abs" else "u - v",
        **f.meta,
    }
    pj = out_dir / f"{stem}.json"
    pj.write_text(json.dumps(meta, indent=2, default=float))
    paths.append(pj)
    return paths
