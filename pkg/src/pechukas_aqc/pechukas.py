"""Pechukas gas: equations of motion, adaptive integration, monitors.

The eigenvalues of ``H(lam) = H0 + lam Z Hb`` move like particles of a 1D gas
with positions ``x``, velocities ``v`` and relative angular momenta ``l``::

    dx_m/dlam = v_m
    dv_m/dlam = 2 sum_n |l_mn|^2 / (x_m - x_n)^3
    dl_mn/dlam = sum_k l_mk l_kn (1/(x_m - x_k)^2 - 1/(x_k - x_n)^2)

The gas is integrated from ``lam = 1`` down to ``lam = 0`` with an embedded
Dormand-Prince 5(4) pair and a PI step-size controller.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .hamiltonian import DEGENERACY_TOL, ProblemDefinition, diagonalize

__all__ = [
    "PechukasState",
    "IntegratorConfig",
    "ConservedQuantities",
    "Trajectory",
    "SingularityError",
    "IntegrationError",
    "derivatives",
    "conserved",
    "integrate",
    "track_spectrum_oracle",
    "hermite",
]

log = logging.getLogger(__name__)

ORACLE_MAX_DIM = 64


class SingularityError(ArithmeticError):
    def __init__(self, pair: tuple[int, int], lam: float):
        self.pair = pair
        self.lam = lam
        super().__init__(f"particles {pair[0]} and {pair[1]} coincide at lambda={lam:.12g} with nonzero l")


class IntegrationError(RuntimeError):
    def __init__(self, message: str, lam: float, pair: tuple[int, int] | None = None):
        self.lam = lam
        self.pair = pair
        super().__init__(message)


@dataclass
class PechukasState:
    """Gas configuration at parameter value ``lam``.

    ``l`` is a dense anti-Hermitian matrix with zero diagonal.
    """

    lam: float
    x: np.ndarray
    v: np.ndarray
    l: np.ndarray
    meta: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return len(self.x)

    def antihermitian_defect(self) -> float:
        return float(np.max(np.abs(self.l + self.l.conj().T)))


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-9
    abs_tol: float = 1e-11
    max_step: float = 1e-3
    min_step: float = 1e-14
    dense_output_points: int = 2000
    # lambda values at which the full l matrix is kept in the trajectory
    l_checkpoints: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.min_step < self.max_step <= 1):
            raise ValueError(f"need 0 < min_step < max_step <= 1, got {self.min_step}, {self.max_step}")
        if self.dense_output_points < 2:
            raise ValueError("dense_output_points must be >= 2")


@dataclass(frozen=True)
class ConservedQuantities:
    total_momentum: float
    gas_energy: float
    center_drift_check: float


def _inverse_distances(x: np.ndarray, l: np.ndarray, lam: float) -> np.ndarray:
    """``1/(x_m - x_n)`` where ``l_mn != 0``, zero elsewhere."""
    dx = x[:, None] - x[None, :]
    coupled = l != 0
    np.fill_diagonal(coupled, False)
    inv = np.zeros_like(dx)
    with np.errstate(divide="ignore"):
        np.divide(1.0, dx, out=inv, where=coupled)
    if not np.all(np.isfinite(inv)) or np.any(coupled & (dx == 0)):
        bad = np.argwhere(coupled & ((dx == 0) | ~np.isfinite(inv)))
        m, n = sorted(int(i) for i in bad[0])
        raise SingularityError((m, n), lam)
    return inv


def _rhs(x: np.ndarray, v: np.ndarray, l: np.ndarray, lam: float):
    inv = _inverse_distances(x, l, lam)
    inv2 = inv * inv
    l2 = l.real**2 + l.imag**2
    dv = 2.0 * np.sum(l2 * inv2 * inv, axis=1)
    w = l * inv2
    dl = w @ l - l @ w
    dl = 0.5 * (dl - dl.conj().T)
    np.fill_diagonal(dl, 0.0)
    return v.copy(), dv, dl


def derivatives(s: PechukasState):
    """Right-hand side ``(dx, dv, dl)`` of the gas equations at state ``s``.

    Pairs with ``l_mn == 0`` exactly do not interact (symmetry-decoupled
    levels may then cross); any coupled pair at coincident positions raises
    :class:`SingularityError`.
    """
    return _rhs(np.asarray(s.x, float), np.asarray(s.v, float), np.asarray(s.l, complex), s.lam)


def conserved(s: PechukasState) -> ConservedQuantities:
    """First integrals of the gas: ``Tr Z Hb`` and ``Tr (Z Hb)^2 / 2``."""
    inv = _inverse_distances(s.x, s.l, s.lam)
    l2 = s.l.real**2 + s.l.imag**2
    energy = 0.5 * float(np.sum(s.v**2)) + 0.5 * float(np.sum(l2 * inv**2))
    dx, _, _ = derivatives(s)
    return ConservedQuantities(
        total_momentum=float(np.sum(s.v)),
        gas_energy=energy,
        center_drift_check=float(np.sum(dx) - np.sum(s.v)),
    )


def hermite(t, t0, t1, y0, y1, d0, d1):
    """Cubic Hermite interpolant on ``[t0, t1]`` (arrays broadcast over the last axes)."""
    h = t1 - t0
    s = (t - t0) / h
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1


@dataclass(eq=False)
class Trajectory:
    """Dense and node-level record of one transit ``lam: 1 -> 0``.

    ``node_*`` arrays hold every accepted step (descending lam) with the
    derivatives needed for cubic Hermite interpolation; ``lam``/``x``/``v`` are
    the equally spaced dense samples. ``node_lsup`` holds ``l[m, m+1]``.
    """

    lam: np.ndarray
    x: np.ndarray
    v: np.ndarray
    node_lam: np.ndarray
    node_x: np.ndarray
    node_v: np.ndarray
    node_a: np.ndarray
    node_lsup: np.ndarray
    node_dlsup: np.ndarray | None
    initial: PechukasState | None = None
    final: PechukasState | None = None
    l_checkpoints: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.node_x.shape[1]

    @property
    def spectral_range(self) -> float:
        return float(np.max(self.node_x) - np.min(self.node_x))

    def _locate(self, lam):
        lam = np.atleast_1d(np.asarray(lam, float))
        # node_lam is descending; search on the reversed (ascending) copy
        asc = self.node_lam[::-1]
        j = np.searchsorted(asc, lam, side="right") - 1
        j = np.clip(j, 0, len(asc) - 2)
        hi = len(asc) - 1 - j  # index (descending order) of the lower lam node
        lo = hi - 1
        return lam, lo, hi

    def positions(self, lam) -> np.ndarray:
        """Hermite-interpolated ``x`` at the given lam values, shape (len(lam), N)."""
        lam, i, k = self._locate(lam)
        t0, t1 = self.node_lam[i][:, None], self.node_lam[k][:, None]
        return hermite(lam[:, None], t0, t1, self.node_x[i], self.node_x[k], self.node_v[i], self.node_v[k])

    def velocities(self, lam) -> np.ndarray:
        lam, i, k = self._locate(lam)
        t0, t1 = self.node_lam[i][:, None], self.node_lam[k][:, None]
        return hermite(lam[:, None], t0, t1, self.node_v[i], self.node_v[k], self.node_a[i], self.node_a[k])

    def adjacent_l(self, lam) -> np.ndarray:
        """``|l_{m,m+1}|`` at the given lam values, shape (len(lam), N-1)."""
        lam, i, k = self._locate(lam)
        t0, t1 = self.node_lam[i][:, None], self.node_lam[k][:, None]
        if self.node_dlsup is None:
            a0, a1 = np.abs(self.node_lsup[i]), np.abs(self.node_lsup[k])
            s = (lam[:, None] - t0) / (t1 - t0)
            return (1 - s) * a0 + s * a1
        vals = hermite(lam[:, None], t0, t1, self.node_lsup[i], self.node_lsup[k], self.node_dlsup[i], self.node_dlsup[k])
        return np.abs(vals)


class _Packer:
    def __init__(self, n: int):
        self.n = n
        self.nn = n * n

    def pack(self, x, v, l):
        return np.concatenate([x, v, l.real.ravel(), l.imag.ravel()])

    def unpack(self, y):
        n, nn = self.n, self.nn
        x = y[:n]
        v = y[n:2 * n]
        l = (y[2 * n:2 * n + nn] + 1j * y[2 * n + nn:]).reshape(n, n)
        return x, v, l


# Dormand-Prince 5(4), FSAL
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])

_SAFETY = 0.9
_FAC_MIN = 0.2
_FAC_MAX = 5.0
_BETA = 0.04
_ALPHA = 0.2 - 0.75 * _BETA


def _closest_pair(x: np.ndarray, l: np.ndarray) -> tuple[int, int]:
    dx = np.abs(x[:, None] - x[None, :])
    dx[l == 0] = np.inf
    np.fill_diagonal(dx, np.inf)
    m, n = np.unravel_index(np.argmin(dx), dx.shape)
    return (int(min(m, n)), int(max(m, n)))


def _energy(x, v, l, lam) -> float:
    inv = _inverse_distances(x, l, lam)
    l2 = l.real**2 + l.imag**2
    return 0.5 * float(v @ v) + 0.5 * float(np.sum(l2 * inv**2))


def integrate(p: ProblemDefinition | None, s0: PechukasState, cfg: IntegratorConfig = IntegratorConfig()) -> Trajectory:
    """Integrate the gas from ``s0`` (at lam = 1) to lam = 0.

    Raises:
        IntegrationError: step size fell below ``cfg.min_step`` or the state
            became non-finite.
        SingularityError: two coupled particles met.
    """
    t_start = time.perf_counter()
    n = s0.n
    if p is not None and p.dim != n:
        raise ValueError(f"state has {n} particles but problem has dimension {p.dim}")
    pk = _Packer(n)
    lam = float(s0.lam)
    y = pk.pack(np.asarray(s0.x, float), np.asarray(s0.v, float), np.asarray(s0.l, complex))
    nfev = 0

    def f(lam_, y_):
        nonlocal nfev
        nfev += 1
        x_, v_, l_ = pk.unpack(y_)
        dx, dv, dl = _rhs(x_, v_, l_, lam_)
        return pk.pack(dx, dv, dl)

    rtol, atol = cfg.rel_tol, cfg.abs_tol

    def err_norm(e, y_old, y_new):
        sc = atol + rtol * np.maximum(np.abs(y_old), np.abs(y_new))
        return float(np.sqrt(np.mean((e / sc) ** 2)))

    k0 = f(lam, y)
    # initial step guess (Hairer, Norsett & Wanner II.4)
    sc0 = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / sc0) ** 2))
    d1 = np.sqrt(np.mean((k0 / sc0) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, cfg.max_step, lam)
    k_probe = f(lam - h0, y - h0 * k0)
    d2 = np.sqrt(np.mean(((k_probe - k0) / sc0) ** 2)) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    h = min(100 * h0, h1, cfg.max_step, lam)

    x_, v_, l_ = pk.unpack(y)
    mom0 = float(np.sum(v_))
    mom_scale = max(abs(mom0), float(np.sum(np.abs(v_))), np.finfo(float).tiny)
    e0 = _energy(x_, v_, l_, lam)
    e_scale = max(abs(e0), np.finfo(float).tiny)
    max_mom_drift = 0.0
    max_e_drift = 0.0
    max_ah = s0.antihermitian_defect()

    node_lam = [lam]
    node_y = [y[: 2 * n].copy()]
    node_a = [k0[n:2 * n].copy()]
    iu = np.arange(n - 1)
    node_lsup = [l_[iu, iu + 1].copy()]
    _, _, dl0 = pk.unpack(k0)
    node_dlsup = [dl0[iu, iu + 1].copy()]
    checkpoints = {}
    pending_ckpt = sorted((c for c in cfg.l_checkpoints if 0 <= c <= 1), reverse=True)
    for c in list(pending_ckpt):
        if c >= lam:
            checkpoints[float(c)] = np.array(l_)
            pending_ckpt.remove(c)

    err_prev = 1e-4
    accepted = rejected = 0
    stages = [None] * 7
    while lam > 0.0:
        h = min(h, lam)
        if h < cfg.min_step and h < lam:
            x_, _, l_ = pk.unpack(y)
            pair = _closest_pair(x_, l_)
            raise IntegrationError(
                f"step size {h:.3e} below min_step {cfg.min_step:.1e} at lambda={lam:.12g}; "
                f"closest coupled pair {pair}", lam, pair)
        stages[0] = k0
        for i in range(1, 7):
            yi = y.copy()
            for j, aij in enumerate(_A[i]):
                if aij:
                    yi -= h * aij * stages[j]
            try:
                stages[i] = f(lam - _C[i] * h, yi)
            except SingularityError:
                stages[i] = None
                break
        if stages[6] is None or any(s is None for s in stages):
            # a stage landed on a collision: treat as a failed step
            rejected += 1
            h *= 0.25
            continue
        y_new = y - h * (stages[0] * _B[0] + stages[2] * _B[2] + stages[3] * _B[3]
                         + stages[4] * _B[4] + stages[5] * _B[5])
        if not np.all(np.isfinite(y_new)):
            rejected += 1
            h *= 0.25
            if h < cfg.min_step:
                raise IntegrationError(f"non-finite state near lambda={lam:.12g}", lam)
            continue
        e = h * sum(_E[i] * stages[i] for i in range(7) if _E[i])
        err = err_norm(e, y, y_new)
        if err <= 1.0:
            lam_new = 0.0 if h >= lam else lam - h
            k_new = stages[6]
            x_new, v_new, l_new = pk.unpack(y_new)
            # checkpoints crossed in this step: Hermite in lam on l
            for c in list(pending_ckpt):
                if c >= lam_new:
                    _, _, dl_old = pk.unpack(k0)
                    _, _, dl_new = pk.unpack(k_new)
                    _, _, l_old = pk.unpack(y)
                    checkpoints[float(c)] = hermite(c, lam, lam_new, l_old, l_new, dl_old, dl_new)
                    pending_ckpt.remove(c)
            y, k0, lam = y_new, k_new, lam_new
            accepted += 1
            node_lam.append(lam)
            node_y.append(y[: 2 * n].copy())
            node_a.append(k0[n:2 * n].copy())
            node_lsup.append(l_new[iu, iu + 1].copy())
            _, _, dln = pk.unpack(k0)
            node_dlsup.append(dln[iu, iu + 1].copy())
            max_mom_drift = max(max_mom_drift, abs(float(np.sum(v_new)) - mom0) / mom_scale)
            max_e_drift = max(max_e_drift, abs(_energy(x_new, v_new, l_new, lam) - e0) / e_scale)
            max_ah = max(max_ah, float(np.max(np.abs(l_new + l_new.conj().T))))
            fac = _SAFETY * max(err, 1e-10) ** -_ALPHA * err_prev**_BETA
            h = h * min(_FAC_MAX, max(_FAC_MIN, fac))
            h = min(h, cfg.max_step)
            err_prev = max(err, 1e-4)
        else:
            rejected += 1
            h = h * max(_FAC_MIN, _SAFETY * err**-_ALPHA)

    node_lam = np.array(node_lam)
    node_y = np.array(node_y)
    node_x, node_v = node_y[:, :n], node_y[:, n:]
    x_f, v_f, l_f = pk.unpack(y)
    final = PechukasState(0.0, x_f.copy(), v_f.copy(), np.array(l_f))
    traj = Trajectory(
        lam=np.empty(0), x=np.empty((0, n)), v=np.empty((0, n)),
        node_lam=node_lam, node_x=node_x, node_v=node_v, node_a=np.array(node_a),
        node_lsup=np.array(node_lsup), node_dlsup=np.array(node_dlsup),
        initial=s0, final=final, l_checkpoints=checkpoints,
    )
    dense = np.linspace(1.0, 0.0, cfg.dense_output_points)
    traj.lam = dense
    traj.x = traj.positions(dense)
    traj.v = traj.velocities(dense)
    traj.x[0], traj.x[-1] = node_x[0], node_x[-1]
    traj.v[0], traj.v[-1] = node_v[0], node_v[-1]
    traj.metadata = {
        "config": asdict(cfg),
        "n": n,
        "accepted_steps": accepted,
        "rejected_steps": rejected,
        "rhs_evaluations": nfev,
        "momentum_drift": max_mom_drift,
        "energy_drift": max_e_drift,
        "antihermitian_defect": max_ah,
        "wall_time_s": time.perf_counter() - t_start,
    }
    log.debug("integrated N=%d: %d steps (%d rejected), energy drift %.2e", n, accepted, rejected, max_e_drift)
    return traj


def _adapt_degenerate_basis(e: np.ndarray, u: np.ndarray, bias: np.ndarray):
    """Rotate eigenvectors of degenerate groups so the bias is diagonal inside each group.

    Returns the rotated vectors and a group label per level (degenerate
    perturbation theory: pairs inside a group do not contribute).
    """
    scale = max(float(e[-1] - e[0]), float(np.max(np.abs(bias))), 1e-300)
    group = np.concatenate([[0], np.cumsum(np.diff(e) > DEGENERACY_TOL * scale)])
    u = u.copy()
    for g in np.unique(group):
        idx = np.flatnonzero(group == g)
        if len(idx) > 1:
            sub = u[:, idx]
            _, w = np.linalg.eigh(sub.conj().T @ bias @ sub)
            u[:, idx] = sub @ w
    return u, group


def track_spectrum_oracle(p: ProblemDefinition, grid_points: int) -> Trajectory:
    """Reference trajectory from dense diagonalization of ``H(lam)`` on a grid.

    Node velocities and accelerations come from first and second order
    perturbation theory at each grid point, so the same Hermite interpolation
    applies as for integrated trajectories.
    """
    if p.dim > ORACLE_MAX_DIM:
        raise ValueError(f"oracle limited to dim <= {ORACLE_MAX_DIM}, got {p.dim}")
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    lam = np.linspace(1.0, 0.0, grid_points)
    n = p.dim
    xs = np.empty((grid_points, n))
    vs = np.empty((grid_points, n))
    acc = np.empty((grid_points, n))
    lsup = np.empty((grid_points, n - 1), dtype=complex)
    bias = p.bias
    iu = np.arange(n - 1)
    for i, lm in enumerate(lam):
        spec = diagonalize(p.hamiltonian(lm), name=f"H({lm:.6g})")
        e = spec.eigenvalues
        u, group = _adapt_degenerate_basis(e, spec.eigenvectors, bias)
        vm = u.conj().T @ bias @ u
        de = e[:, None] - e[None, :]
        de[group[:, None] == group[None, :]] = np.inf
        xs[i] = e
        vs[i] = vm.diagonal().real
        acc[i] = 2.0 * np.sum(np.abs(vm) ** 2 / de, axis=1)
        lsup[i] = (e[:-1] - e[1:]) * vm[iu, iu + 1]
    traj = Trajectory(
        lam=lam, x=xs, v=vs, node_lam=lam, node_x=xs, node_v=vs, node_a=acc,
        node_lsup=lsup, node_dlsup=None,
        metadata={"oracle": "dense diagonalization", "grid_points": grid_points, "n": n},
    )
    return traj
