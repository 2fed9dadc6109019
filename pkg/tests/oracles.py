"""Independent reference computations used by the tests.

Nothing here calls the package's eigensolver wrappers, integrator or
occupation propagation.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import ldl


def count_below(h: np.ndarray, mu: float) -> int:
    """Number of eigenvalues of Hermitian ``h`` below ``mu`` (Sylvester inertia of ``h - mu``)."""
    _, d, _ = ldl(h - mu * np.eye(len(h)), hermitian=True)
    # d is block diagonal with 1x1 and 2x2 blocks; count negative eigenvalues of d
    return int(np.sum(np.linalg.eigvalsh(d) < 0))


def bisection_eigenvalues(h: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    """All eigenvalues of ``h`` by bisection on the inertia count."""
    h = np.asarray(h)
    n = len(h)
    bound = float(np.max(np.sum(np.abs(h), axis=1))) + 1.0  # Gershgorin
    out = np.empty(n)
    for k in range(n):
        lo, hi = -bound, bound
        # k-th eigenvalue: count_below(lo) <= k < count_below(hi)
        while hi - lo > tol * max(1.0, bound):
            mid = 0.5 * (lo + hi)
            if count_below(h, mid) > k:
                hi = mid
            else:
                lo = mid
        out[k] = 0.5 * (lo + hi)
    return out


def spectral_flow_fd(h0: np.ndarray, bias: np.ndarray, lam: float, step: float = 1e-4):
    """Eigenvalues of ``h0 + lam * bias`` and their first two lam-derivatives by central differences."""
    e = [np.linalg.eigvalsh(h0 + (lam + k * step) * bias) for k in (-2, -1, 0, 1, 2)]
    em2, em1, e0, ep1, ep2 = e
    d1 = (em2 - 8 * em1 + 8 * ep1 - ep2) / (12 * step)
    d2 = (-em2 + 16 * em1 - 30 * e0 + 16 * ep1 - ep2) / (12 * step**2)
    return e0, d1, d2


def brute_force_occupations(pairs: list[int], probs: list[float], n_levels: int) -> np.ndarray:
    """Exact Markov-chain occupation matrix by enumerating every swap history.

    ``pairs``/``probs`` are in evolution order; each event swaps levels
    ``(m, m+1)`` with probability ``p``.
    """
    out = np.zeros((n_levels, n_levels))
    k = len(pairs)
    for n0 in range(n_levels):
        for hist in itertools.product((False, True), repeat=k):
            pos, w = n0, 1.0
            for (m, p, swap) in zip(pairs, probs, hist):
                w *= p if swap else 1.0 - p
                if swap and pos == m:
                    pos = m + 1
                elif swap and pos == m + 1:
                    pos = m
            out[pos, n0] += w
    return out


def two_level_gap_squared(h0: np.ndarray, bias: np.ndarray, lam: np.ndarray) -> np.ndarray:
    """``(E_2 - E_1)**2`` of a 2x2 pencil in closed form."""
    a = h0[0, 0] + lam * bias[0, 0]
    d = h0[1, 1] + lam * bias[1, 1]
    b = h0[0, 1] + lam * bias[0, 1]
    return (a - d) ** 2 + 4 * np.abs(b) ** 2
