"""Hermitian matrices, problem definitions and Pechukas initial conditions.

A problem is the pencil ``H(lam) = H0 + lam * Z * Hb``. The Pechukas gas is
started at ``lam = 1`` from the spectral data of ``H(1)``, either from an
exact diagonalization or from first-order perturbation theory in ``1/Z``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

__all__ = [
    "HermitianMatrix",
    "ProblemDefinition",
    "Spectrum",
    "CnotConfig",
    "EnsembleKind",
    "BiasKind",
    "EnsembleSpec",
    "EigensolverError",
    "DegeneracyError",
    "diagonalize",
    "mean_spacing",
    "sample_ensemble",
    "build_cnot",
    "cnot_bias",
    "cnot_problem",
    "initial_conditions_exact",
    "initial_conditions_perturbative",
    "read_matrix",
    "write_matrix",
]

DEGENERACY_TOL = 1e-9
# relative size below which an off-diagonal l_mn is treated as an exact
# symmetry zero (blocks of H(lam) that never talk to each other)
L_CUTOFF = 1e-12
HERMITIAN_FILE_TOL = 1e-12


class EigensolverError(RuntimeError):
    pass


class DegeneracyError(ValueError):
    """Raised when a spectrum needed as a starting point is degenerate."""

    def __init__(self, pair: tuple[int, int], gap: float, tol: float):
        self.pair = pair
        self.gap = gap
        super().__init__(
            f"levels {pair[0]} and {pair[1]} are degenerate: gap {gap:.3e} <= tol {tol:.3e}"
        )


@dataclass(frozen=True, eq=False)
class HermitianMatrix:
    """Dense Hermitian matrix; the input is symmetrized on construction.

    Real input stays real (real symmetric), complex input becomes
    ``(M + M^H) / 2`` which is exactly Hermitian in floating point.
    """

    entries: np.ndarray

    def __post_init__(self):
        m = np.array(self.entries)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {m.shape}")
        if m.shape[0] < 2:
            raise ValueError("dimension must be at least 2")
        if np.iscomplexobj(m):
            m = m.astype(np.complex128)
            if not np.any(m.imag):
                m = m.real.copy()
        else:
            m = m.astype(np.float64)
        m = 0.5 * (m + m.conj().T)
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.entries)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.entries, dtype=dtype)

    def scaled(self, factor: float) -> "HermitianMatrix":
        return HermitianMatrix(self.entries * factor)


@dataclass(frozen=True)
class ProblemDefinition:
    """The pencil ``H(lam) = h0 + lam * z * hb`` together with hbar."""

    h0: HermitianMatrix
    hb: HermitianMatrix
    z: float = 1.0
    hbar: float = 1.0
    metadata: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.h0.dim != self.hb.dim:
            raise ValueError(f"h0 is {self.h0.dim}x{self.h0.dim} but hb is {self.hb.dim}x{self.hb.dim}")
        if not self.z > 0:
            raise ValueError(f"z must be positive, got {self.z}")
        if not self.hbar > 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")

    @property
    def dim(self) -> int:
        return self.h0.dim

    @property
    def bias(self) -> np.ndarray:
        """The full bias operator ``Z * Hb``."""
        return self.z * self.hb.entries

    def hamiltonian(self, lam: float) -> np.ndarray:
        return self.h0.entries + lam * self.bias

    def rescaled(self, factor: float) -> "ProblemDefinition":
        """All energies multiplied by ``factor`` (H0 and Hb alike, Z untouched)."""
        meta = dict(self.metadata)
        meta["energy_rescale"] = meta.get("energy_rescale", 1.0) * factor
        return ProblemDefinition(self.h0.scaled(factor), self.hb.scaled(factor), self.z, self.hbar, meta)


@dataclass(frozen=True, eq=False)
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def spectral_range(self) -> float:
        return float(self.eigenvalues[-1] - self.eigenvalues[0])


def diagonalize(m: HermitianMatrix | np.ndarray, name: str = "matrix") -> Spectrum:
    """Full eigendecomposition with ascending eigenvalues.

    Backed by LAPACK (``numpy.linalg.eigh``); its internal QL/QR iteration
    cap surfaces as :class:`EigensolverError`.
    """
    a = m.entries if isinstance(m, HermitianMatrix) else np.asarray(m)
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise EigensolverError(
            f"eigensolver did not converge for {name} ({a.shape[0]}x{a.shape[0]}) "
            f"within the LAPACK iteration cap: {exc}"
        ) from exc
    return Spectrum(w, v)


def mean_spacing(eigenvalues: np.ndarray) -> float:
    """Mean adjacent spacing ``<E_{n+1} - E_n>`` of a sorted spectrum."""
    e = np.sort(np.asarray(eigenvalues))
    return float((e[-1] - e[0]) / (len(e) - 1))


def _check_nondegenerate(e: np.ndarray, tol: float) -> None:
    gaps = np.diff(e)
    k = int(np.argmin(gaps))
    if gaps[k] <= tol:
        raise DegeneracyError((k, k + 1), float(gaps[k]), tol)


# --------------------------------------------------------------------------
# ensembles


class EnsembleKind(str, Enum):
    GUE = "GUE"
    GOE = "GOE"


class BiasKind(str, Enum):
    PICKET_FENCE = "diagonal-picket-fence"
    RANDOM = "random-same-ensemble"


@dataclass(frozen=True)
class EnsembleSpec:
    """Gaussian ensemble for H0 plus the rule for the bias Hb.

    ``sigma_h0`` is the r.m.s. size of an off-diagonal entry of H0. Diagonal
    entries have r.m.s. ``sigma_h0`` for GUE (unitary invariance) and
    ``sigma_h0 * sqrt(2)`` for GOE.
    """

    dim: int
    ensemble_kind: EnsembleKind = EnsembleKind.GUE
    sigma_h0: float = 1.0
    hb_kind: BiasKind = BiasKind.RANDOM
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "ensemble_kind", EnsembleKind(self.ensemble_kind))
        object.__setattr__(self, "hb_kind", BiasKind(self.hb_kind))
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if not self.sigma_h0 > 0:
            raise ValueError(f"sigma_h0 must be positive, got {self.sigma_h0}")


def _gaussian_matrix(rng: np.random.Generator, n: int, kind: EnsembleKind, sigma: float) -> np.ndarray:
    if kind is EnsembleKind.GUE:
        re = rng.normal(0.0, sigma / np.sqrt(2.0), (n, n))
        im = rng.normal(0.0, sigma / np.sqrt(2.0), (n, n))
        a = np.triu(re + 1j * im, 1)
        diag = rng.normal(0.0, sigma, n)
    else:
        a = np.triu(rng.normal(0.0, sigma, (n, n)), 1)
        diag = rng.normal(0.0, sigma * np.sqrt(2.0), n)
    return a + a.conj().T + np.diag(diag)


VARIANCE_CONVENTION = "offdiag rms = sigma_h0; diag rms = sigma_h0 (GUE) / sigma_h0*sqrt(2) (GOE)"


def sample_ensemble(spec: EnsembleSpec, z: float = 1.0) -> ProblemDefinition:
    """Draw ``(H0, Hb)`` deterministically from ``spec.seed``.

    Hb is normalized to unit mean level spacing before the ``z`` multiplier.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.dim
    h0 = _gaussian_matrix(rng, n, spec.ensemble_kind, spec.sigma_h0)
    if spec.hb_kind is BiasKind.PICKET_FENCE:
        hb = np.diag(np.arange(n, dtype=float))
    else:
        hb = _gaussian_matrix(rng, n, spec.ensemble_kind, 1.0)
        hb = hb / mean_spacing(np.linalg.eigvalsh(hb))
    meta = {
        "ensemble": spec.ensemble_kind.value,
        "hb_kind": spec.hb_kind.value,
        "sigma_h0": spec.sigma_h0,
        "seed": spec.seed,
        "variance_convention": VARIANCE_CONVENTION,
    }
    return ProblemDefinition(HermitianMatrix(h0), HermitianMatrix(hb), z, 1.0, meta)


# --------------------------------------------------------------------------
# CNOT in the ground-state quantum computing encoding

@dataclass(frozen=True)
class CnotConfig:
    epsilon: float = -0.1


def _cnot_index(q0: tuple[int, int], q1: tuple[int, int]) -> int:
    # each qubit row holds one electron on dot (step, j); local index 2*step + j
    return 4 * (2 * q0[0] + q0[1]) + (2 * q1[0] + q1[1])


def build_cnot(cfg: CnotConfig = CnotConfig()) -> HermitianMatrix:
    """16x16 CNOT Hamiltonian plus the input-selecting bias ``delta H``.

    Basis states are ``|q0 dot, q1 dot>`` with one electron per qubit row;
    operators conserve the electron number of every row, so fermionic signs
    cancel and each term maps basis states directly.
    """
    h = np.zeros((16, 16))

    def add_projector(a: int, b: int) -> None:
        # |u><u| with u = |a> - |b>
        h[a, a] += 1.0
        h[b, b] += 1.0
        h[a, b] -= 1.0
        h[b, a] -= 1.0

    for j in (0, 1):
        # control 0: target copied unchanged from step 0 to step 1
        add_projector(_cnot_index((1, 0), (1, j)), _cnot_index((0, 0), (0, j)))
        # control 1: target flipped (sigma^x) between steps
        add_projector(_cnot_index((1, 1), (1, j)), _cnot_index((0, 1), (0, 1 - j)))

    # both qubits must sit on the same step
    for j0 in (0, 1):
        for j1 in (0, 1):
            h[_cnot_index((0, j0), (1, j1)), _cnot_index((0, j0), (1, j1))] += 1.0
            h[_cnot_index((1, j0), (0, j1)), _cnot_index((1, j0), (0, j1))] += 1.0

    # delta H = eps (n_000 + n_100): favours input |00>
    for k in range(16):
        s0, s1 = divmod(k, 4)
        h[k, k] += cfg.epsilon * ((s0 == 0) + (s1 == 0))
    return HermitianMatrix(h)


def cnot_bias(dither: float = 1e-3) -> HermitianMatrix:
    """Picket-fence bias ``diag(k + dither * k**2)`` on the 16 CNOT states."""
    k = np.arange(16, dtype=float)
    return HermitianMatrix(np.diag(k + dither * k**2))


def cnot_problem(cfg: CnotConfig = CnotConfig(), z: float = 10.0, hb: HermitianMatrix | None = None) -> ProblemDefinition:
    hb = cnot_bias() if hb is None else hb
    return ProblemDefinition(build_cnot(cfg), hb, z, 1.0, {"epsilon": cfg.epsilon, "builtin": "cnot"})


# --------------------------------------------------------------------------
# initial conditions at lam = 1

def _assemble_state(x: np.ndarray, vmat: np.ndarray, bias_scale: float):
    from .pechukas import PechukasState

    vmat = 0.5 * (vmat + vmat.conj().T)
    # symmetry zeros: coupling elements at roundoff level are exactly zero
    off = np.abs(vmat) <= L_CUTOFF * bias_scale
    np.fill_diagonal(off, False)
    vmat = np.where(off, 0.0, vmat)
    v = vmat.diagonal().real.copy()
    l = (x[:, None] - x[None, :]) * vmat
    np.fill_diagonal(l, 0.0)
    l = 0.5 * (l - l.conj().T)
    return PechukasState(1.0, x.copy(), v, l)


def _bias_scale(p: ProblemDefinition) -> float:
    return float(max(np.max(np.abs(p.bias)), np.finfo(float).tiny))


def initial_conditions_exact(p: ProblemDefinition):
    """Pechukas state at ``lam = 1`` from the exact spectrum of ``H(1)``.

    ``x_n = E_n``, ``v_n = <n|Z Hb|n>``, ``l_mn = (E_m - E_n) <m|Z Hb|n>``.
    """
    spec = diagonalize(p.hamiltonian(1.0), name="H(1)")
    _check_nondegenerate(spec.eigenvalues, DEGENERACY_TOL * max(spec.spectral_range, 1e-300))
    u = spec.eigenvectors
    vmat = u.conj().T @ p.bias @ u
    return _assemble_state(spec.eigenvalues, vmat, _bias_scale(p))


def initial_conditions_perturbative(p: ProblemDefinition, order: int = 1):
    """Pechukas state at ``lam = 1`` to first order in ``1/Z``.

    Writing ``H(1) = Z (Hb + H0 / Z)`` and expanding in the eigenbasis
    ``|m>`` of Hb (eigenvalues ``b_m``), every quantity is truncated at the
    same order::

        x_m = Z b_m + <m|H0|m>
        v_m = Z b_m                      (first-order shift of <m|Z Hb|m> vanishes)
        <m|Z Hb|n> = -<m|H0|n>           (m != n, from the corrected eigenvectors)
        l_mn = (x_m - x_n) <m|Z Hb|n>

    The gas defined this way reaches exactly the spectrum of H0 at lam = 0;
    only the intermediate trajectory carries the ``O(1/Z)`` error.
    """
    if order != 1:
        raise ValueError(f"only order=1 is implemented, got {order}")
    hb = diagonalize(p.hb, name="Hb")
    b = hb.eigenvalues
    _check_nondegenerate(b, DEGENERACY_TOL * max(hb.spectral_range, 1e-300))
    u = hb.eigenvectors
    h0 = u.conj().T @ p.h0.entries @ u
    if p.h0.is_real and p.hb.is_real:
        h0 = h0.real
    x = p.z * b + h0.diagonal().real
    vmat = -h0.astype(np.complex128)
    np.fill_diagonal(vmat, p.z * b)
    order_ = np.argsort(x, kind="stable")
    x = x[order_]
    vmat = vmat[np.ix_(order_, order_)]
    state = _assemble_state(x, vmat, _bias_scale(p))
    state.meta["first_order_energies"] = x.copy()
    return state


# --------------------------------------------------------------------------
# text matrix format: "dim" then dim rows of "re,im" entries

def read_matrix(path: str | Path, tol: float = HERMITIAN_FILE_TOL) -> HermitianMatrix:
    path = Path(path)
    with path.open() as fh:
        lines = [ln for ln in (raw.strip() for raw in fh) if ln]
    if not lines:
        raise ValueError(f"{path}: empty matrix file")
    try:
        dim = int(lines[0])
    except ValueError:
        raise ValueError(f"{path}: first line must be the dimension, got {lines[0]!r}") from None
    if len(lines) != dim + 1:
        raise ValueError(f"{path}: expected {dim} matrix rows, found {len(lines) - 1}")
    m = np.empty((dim, dim), dtype=np.complex128)
    for i, row in enumerate(lines[1:]):
        items = row.split()
        if len(items) != dim:
            raise ValueError(f"{path}: row {i + 1} has {len(items)} entries, expected {dim}")
        for j, item in enumerate(items):
            try:
                re, im = item.split(",")
                m[i, j] = complex(float(re), float(im))
            except ValueError:
                raise ValueError(f"{path}: bad entry {item!r} at ({i + 1},{j + 1}); expected re,im") from None
    asym = float(np.max(np.abs(m - m.conj().T)))
    if asym > tol:
        raise ValueError(f"{path}: matrix is not Hermitian (max|M - M^H| = {asym:.3e} > {tol:.0e})")
    return HermitianMatrix(m)


def write_matrix(path: str | Path, m: HermitianMatrix) -> None:
    a = np.asarray(m.entries, dtype=np.complex128)
    with Path(path).open("w") as fh:
        fh.write(f"{a.shape[0]}\n")
        for row in a:
            fh.write(" ".join(f"{float(z.real)!r},{float(z.imag)!r}" for z in row) + "\n")
