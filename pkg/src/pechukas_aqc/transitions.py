"""Avoided crossings, Landau-Zener probabilities and level occupations.

Gap minima of adjacent particles are located once per trajectory (the gas
does not know about the sweep rate); the sweep time only enters through

    p_LZ = exp(-delta_min**2 / (4 pi hbar |<m|Z Hb|m+1>| |dlam/dt|))

which sets how much occupation the two levels exchange.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.interpolate import BPoly
from scipy.optimize import brentq

from .pechukas import Trajectory

__all__ = [
    "SweepSpec",
    "AnticrossingEvent",
    "OccupationMatrix",
    "locate_gap_minima",
    "detect_anticrossings",
    "lz_probability",
    "with_probabilities",
    "propagate_occupations",
    "simulate_hopping",
]

log = logging.getLogger(__name__)

LAMBDA_TOL = 1e-9
NEAR_DEGENERATE_REL = 1e-13


@dataclass(frozen=True)
class SweepSpec:
    """Uniform sweep ``lam(t) = 1 - t / T``."""

    total_time: float
    hbar: float = 1.0

    def __post_init__(self):
        if not self.total_time > 0:
            raise ValueError(f"total_time must be positive, got {self.total_time}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")

    @property
    def lam_dot(self) -> float:
        return 1.0 / self.total_time


@dataclass(frozen=True)
class AnticrossingEvent:
    pair: int  # lower level m of the pair (m, m+1), 0-based
    lambda_star: float
    delta_min: float
    coupling: float
    p_lz: float = float("nan")
    near_degenerate: bool = False


@dataclass(eq=False)
class OccupationMatrix:
    """``p[m, n]``: probability of ending in level m after starting in level n."""

    p: np.ndarray

    @property
    def n(self) -> int:
        return self.p.shape[0]

    def survival(self) -> np.ndarray:
        return self.p.diagonal().copy()

    def column_defect(self) -> float:
        return float(np.max(np.abs(self.p.sum(axis=0) - 1.0)))

    def row_defect(self) -> float:
        return float(np.max(np.abs(self.p.sum(axis=1) - 1.0)))


def lz_probability(delta_min: float, coupling: float, sweep: SweepSpec) -> float:
    """Landau-Zener exchange probability at one anticrossing."""
    if delta_min < 0 or coupling < 0:
        raise ValueError(f"delta_min and coupling must be non-negative, got {delta_min}, {coupling}")
    if delta_min == 0:
        return 1.0
    if coupling == 0:
        return 0.0
    return math.exp(-(delta_min**2) / (4.0 * math.pi * sweep.hbar * coupling * sweep.lam_dot))


def _lz_vector(delta: np.ndarray, coupling: np.ndarray, sweep: SweepSpec) -> np.ndarray:
    out = np.zeros_like(delta)
    crossing = delta == 0
    ok = (coupling > 0) & ~crossing
    out[ok] = np.exp(-delta[ok] ** 2 / (4.0 * np.pi * sweep.hbar * coupling[ok] * sweep.lam_dot))
    out[crossing] = 1.0
    return out


def locate_gap_minima(traj: Trajectory) -> list[AnticrossingEvent]:
    """Every strict interior local minimum of every adjacent gap.

    Brackets come from sign changes of the gap velocity at the stored nodes;
    each bracket is refined on the quintic Hermite interpolant built from the
    gap and its first two derivatives. The minimum is the bracketed root of
    the interpolant's slope (Brent), located to ``LAMBDA_TOL`` in lam; the gap
    is too flat there for a value-based search to reach that precision.
    Events carry no probability yet; see :func:`with_probabilities`.
    """
    lam = traj.node_lam
    gap = np.diff(traj.node_x, axis=1)
    dgap = np.diff(traj.node_v, axis=1)
    ddgap = np.diff(traj.node_a, axis=1)
    scale = traj.spectral_range
    events: list[AnticrossingEvent] = []
    # nodes run in decreasing lam: node i is the upper end of interval (i, i+1).
    # a minimum in lam has dgap < 0 below and dgap > 0 above it.
    hits = np.argwhere((dgap[:-1] > 0) & (dgap[1:] < 0))
    # a minimum sitting exactly on a node
    on_node = np.argwhere((dgap[1:-1] == 0) & (dgap[:-2] > 0) & (dgap[2:] < 0))
    brackets = [(int(i), int(m)) for i, m in hits]
    brackets += [(int(i), int(m)) for i, m in on_node]  # node i+1 is the minimum; interval i covers it
    for i, m in sorted(set(brackets)):
        t_hi, t_lo = lam[i], lam[i + 1]
        g = BPoly.from_derivatives([t_lo, t_hi], [[gap[i + 1, m], dgap[i + 1, m], ddgap[i + 1, m]],
                                                  [gap[i, m], dgap[i, m], ddgap[i, m]]])

        t_star = float(brentq(g.derivative(), t_lo, t_hi, xtol=LAMBDA_TOL * 1e-3, rtol=4 * np.finfo(float).eps))
        delta = float(max(g(t_star), 0.0))
        l_abs = float(traj.adjacent_l(t_star)[0, m])
        near = delta <= NEAR_DEGENERATE_REL * scale and l_abs > 0
        if near:
            log.warning("near-degenerate anticrossing: pair %d at lambda=%.12g, gap %.3e", m, t_star, delta)
            coupling = 0.0
            delta = 0.0
        else:
            coupling = l_abs / delta if delta > 0 else 0.0
        events.append(AnticrossingEvent(m, t_star, delta, coupling, near_degenerate=near))
    events.sort(key=lambda e: (-e.lambda_star, e.pair))
    return events


def with_probabilities(events: Sequence[AnticrossingEvent], sweep: SweepSpec) -> list[AnticrossingEvent]:
    if not events:
        return []
    delta = np.array([e.delta_min for e in events])
    coupling = np.array([e.coupling for e in events])
    p = _lz_vector(delta, coupling, sweep)
    return [replace(e, p_lz=float(pk)) for e, pk in zip(events, p)]


def detect_anticrossings(traj: Trajectory, sweep: SweepSpec) -> list[AnticrossingEvent]:
    """Gap minima with their Landau-Zener probability, in evolution order (decreasing lam)."""
    return with_probabilities(locate_gap_minima(traj), sweep)


def _ordered(events: Iterable[AnticrossingEvent]) -> list[AnticrossingEvent]:
    # evolution order; simultaneous events by ascending pair index
    return sorted(events, key=lambda e: (-e.lambda_star, e.pair))


def propagate_occupations(events: Iterable[AnticrossingEvent], n_levels: int) -> OccupationMatrix:
    """Apply the pairwise exchanges of ``events`` to the identity.

    Each event mixes rows m and m+1 with weight ``p_lz``; the result is
    doubly stochastic.
    """
    p = np.eye(n_levels)
    for e in _ordered(events):
        m = e.pair
        if not 0 <= m < n_levels - 1:
            raise ValueError(f"event pair {m} out of range for {n_levels} levels")
        q = e.p_lz
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"event at lambda={e.lambda_star} has p_lz={q} outside [0, 1]")
        a, b = p[m].copy(), p[m + 1].copy()
        p[m] = (1.0 - q) * a + q * b
        p[m + 1] = q * a + (1.0 - q) * b
    return OccupationMatrix(p)


def simulate_hopping(events: Iterable[AnticrossingEvent], n_levels: int, samples: int,
                     rng: np.random.Generator) -> OccupationMatrix:
    """Monte Carlo estimate of the occupation matrix by stochastic hopping.

    For every starting level, ``samples`` walkers hop across each event they
    sit on with probability ``p_lz``. Cross-check for
    :func:`propagate_occupations`.
    """
    out = np.zeros((n_levels, n_levels))
    evs = _ordered(events)
    for n0 in range(n_levels):
        pos = np.full(samples, n0)
        for e in evs:
            lower = pos == e.pair
            upper = pos == e.pair + 1
            hop = rng.random(samples) < e.p_lz
            pos = np.where(lower & hop, e.pair + 1, np.where(upper & hop, e.pair, pos))
        out[:, n0] = np.bincount(pos, minlength=n_levels) / samples
    return OccupationMatrix(out)
