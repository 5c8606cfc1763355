"""Exact diagonalization of the extended Dicke Hamiltonian in symmetry sectors.

The Hamiltonian acts on the fixed-``j`` quasispin block coupled to one bosonic
mode.  States are labelled ``|n, m>`` with ``n`` the boson number and ``m`` the
``J3`` eigenvalue.  For ``delta = 0`` the excitation number ``M = n + m + j`` is
conserved and each ``M`` gives a finite block.  For ``delta > 0`` only the
parity ``(-1)**M`` survives and the boson space must be truncated at ``n_max``.

Basis order is ascending ``M`` then ascending ``m``.  Inside an ``M`` block this
is descending ``n``; inside a parity block it keeps the matrix banded with
half-bandwidth of roughly ``2(2j + 1)``.
"""
from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import ContractError, DomainError, ResourceError
from .params import ModelParams

log = logging.getLogger(__name__)


class BasisState(NamedTuple):
    """Product state ``|n, m>``; ``m_twice`` stores ``2m`` as an integer."""

    n: int
    m_twice: int

    @property
    def m(self) -> float:
        return self.m_twice / 2

    def excitation(self, two_j: int) -> int:
        """``M = n + m + j``."""
        return self.n + (self.m_twice + two_j) // 2


@dataclass(frozen=True)
class MBlock:
    """Conserved-``M`` block, valid for ``delta = 0``."""

    M: int

    @property
    def label(self) -> str:
        return f"M={self.M}"


@dataclass(frozen=True)
class ParityBlock:
    """Parity block ``(-1)**M = parity`` with boson cutoff ``n <= n_max``.

    ``m_max`` optionally also caps the excitation number ``M``; it is the
    cheaper truncation when only states with moderate ``<M>`` are wanted.
    """

    parity: int
    n_max: int
    m_max: int | None = None

    @property
    def label(self) -> str:
        tail = "" if self.m_max is None else f"/mmax={self.m_max}"
        return f"P={self.parity:+d}/nmax={self.n_max}{tail}"


Sector = MBlock | ParityBlock


class Observable(str, enum.Enum):
    BosonNumber = "n"
    J3 = "J3"
    MOp = "M"
    Parity = "parity"


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenpairs of one sector with diagonal expectation values.

    ``eigenvectors[:, k]`` belongs to ``energies[k]``; rows follow ``basis``.
    Expectations are keyed by :class:`Observable` value strings.
    """

    sector: Sector
    params: ModelParams
    basis: tuple[BasisState, ...]
    energies: np.ndarray
    eigenvectors: np.ndarray
    expectations: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.energies)

    def expectation(self, observable) -> np.ndarray:
        return self.expectations[Observable(observable).value]


# ---------------------------------------------------------------------------
# basis


def mblock_dimension(two_j: int, M: int) -> int:
    return min(M, two_j) + 1


def build_basis(params: ModelParams, sector: Sector) -> list[BasisState]:
    """Enumerate the basis of ``sector`` in ascending (M, m) order."""
    tj = params.two_j
    if isinstance(sector, MBlock):
        M = sector.M
        if M < 0:
            raise DomainError(f"empty sector: M={M} < 0")
        # n* = m + j runs over max(0, M - n) .. min(M, 2j); ascending m
        lo = 0
        hi = min(M, tj)
        return [BasisState(M - ns, 2 * ns - tj) for ns in range(lo, hi + 1)]
    if isinstance(sector, ParityBlock):
        if sector.parity not in (1, -1):
            raise DomainError("parity must be +1 or -1")
        if sector.n_max < 0:
            raise DomainError("n_max must be >= 0")
        states = []
        top = sector.n_max + tj
        if sector.m_max is not None:
            top = min(top, sector.m_max)
        for M in range(0, top + 1):
            if (-1) ** M != sector.parity:
                continue
            for ns in range(max(0, M - sector.n_max), min(M, tj) + 1):
                states.append(BasisState(M - ns, 2 * ns - tj))
        if not states:
            raise DomainError("empty parity sector")
        return states
    raise DomainError(f"unknown sector {sector!r}")


def _basis_arrays(params: ModelParams, basis: Sequence[BasisState]):
    b = np.asarray(basis, dtype=np.int64).reshape(-1, 2)
    n, m2 = b[:, 0], b[:, 1]
    tj = params.two_j
    if np.any(n < 0) or np.any(np.abs(m2) > tj) or np.any((m2 - tj) % 2):
        raise DomainError("basis state outside the quasispin range")
    return n, m2


def _couplings(params: ModelParams, basis: Sequence[BasisState]):
    """Upper-triangle off-diagonal entries as (row, col, value) arrays."""
    n, m2 = _basis_arrays(params, basis)
    tj = params.two_j
    index = {(int(a), int(b)): i for i, (a, b) in enumerate(zip(n, m2))}
    g = params.lam / math.sqrt(params.atoms_n)
    rows, cols, vals = [], [], []
    for i, (ni, mi) in enumerate(zip(n.tolist(), m2.tolist())):
        # b^dag J_- : (n, m) -> (n+1, m-1)
        t = index.get((ni + 1, mi - 2))
        if t is not None and g != 0.0:
            jm = (tj + mi) * (tj - mi + 2) / 4.0  # j(j+1) - m(m-1)
            rows.append(i), cols.append(t)
            vals.append(g * math.sqrt(ni + 1) * math.sqrt(jm))
        # delta b^dag J_+ : (n, m) -> (n+1, m+1)
        t = index.get((ni + 1, mi + 2))
        if t is not None and g * params.delta != 0.0:
            jp = (tj - mi) * (tj + mi + 2) / 4.0  # j(j+1) - m(m+1)
            rows.append(i), cols.append(t)
            vals.append(g * params.delta * math.sqrt(ni + 1) * math.sqrt(jp))
    return np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals)


def _diagonal(params: ModelParams, basis):
    n, m2 = _basis_arrays(params, basis)
    return params.omega * n + params.omega0 * (m2 / 2.0)


def hamiltonian_matrix(params: ModelParams, basis: Sequence[BasisState]) -> np.ndarray:
    """Dense real symmetric matrix of the Hamiltonian in ``basis``."""
    d = _diagonal(params, basis)
    H = np.diag(d)
    r, c, v = _couplings(params, basis)
    H[r, c] = v
    H[c, r] = v
    return H


def _banded_lower(params: ModelParams, basis):
    d = _diagonal(params, basis)
    r, c, v = _couplings(params, basis)
    lo, hi = np.minimum(r, c), np.maximum(r, c)
    bw = int((hi - lo).max()) if len(v) else 0
    ab = np.zeros((bw + 1, len(d)))
    ab[0] = d
    ab[hi - lo, lo] = v
    return ab, (r, c, v, d)


# ---------------------------------------------------------------------------
# eigensolver


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def diagonalize(matrix) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a real symmetric matrix.

    Each eigenvector is normalized so that its largest-magnitude component is
    positive.  Raises :class:`ContractError` for non-symmetric input.
    """
    H = np.asarray(matrix, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ContractError("matrix must be square")
    scale = max(np.abs(H).max(initial=0.0), 1.0)
    if not np.allclose(H, H.T, rtol=0.0, atol=1e-12 * scale):
        raise ContractError("matrix is not symmetric")
    w, v = np.linalg.eigh(H)
    v = _fix_signs(v)
    _check_residual(lambda x: H @ x, w, v, np.abs(w).max(initial=0.0))
    return w, v


def _diagonalize_window(H, energy_ceiling):
    # MRRR on the dense matrix; far cheaper than inverse iteration on clusters
    w, v = sla.eigh(H, subset_by_value=(-np.inf, energy_ceiling), driver="evr")
    v = _fix_signs(v)
    _check_residual(lambda x: H @ x, w, v, np.linalg.norm(H, 1))  # bounds ||H||_2
    return w, v


def _check_residual(apply, w, v, norm):
    if not len(w):
        return
    res = np.linalg.norm(apply(v) - v * w, axis=0).max()
    if res > 1e-9 * max(norm, 1e-300):
        raise ResourceError(f"eigensolver residual {res:.3e} exceeds bound")


def sector_levels(params: ModelParams, sector: Sector, energy_ceiling=None) -> np.ndarray:
    """Eigenvalues only, via the banded structure of the (M, m) ordering."""
    basis = build_basis(params, sector)
    ab, _ = _banded_lower(params, basis)
    if energy_ceiling is None:
        return sla.eigvals_banded(ab, lower=True)
    return sla.eigvals_banded(ab, lower=True, select="v",
                              select_range=(-np.inf, energy_ceiling))


# ---------------------------------------------------------------------------
# observables


def _observable_diagonal(params: ModelParams, basis, observable) -> np.ndarray:
    n, m2 = _basis_arrays(params, basis)
    obs = Observable(observable)
    if obs is Observable.BosonNumber:
        return n.astype(float)
    if obs is Observable.J3:
        return m2 / 2.0
    M = n + (m2 + params.two_j) // 2
    if obs is Observable.MOp:
        return M.astype(float)
    return np.where(M % 2 == 0, 1.0, -1.0)


def expectations(spectrum: Spectrum, observable) -> np.ndarray:
    """Per-eigenstate expectation ``<psi_k|A|psi_k>`` of a diagonal observable."""
    a = _observable_diagonal(spectrum.params, spectrum.basis, observable)
    return a @ (spectrum.eigenvectors ** 2)


def solve_sector(params: ModelParams, sector: Sector, energy_ceiling=None) -> Spectrum:
    """Build, diagonalize and attach expectation values for one sector.

    With ``energy_ceiling`` only eigenpairs below it are returned.
    """
    basis = tuple(build_basis(params, sector))
    if isinstance(sector, MBlock) and params.delta != 0:
        raise DomainError("M blocks are only invariant for delta = 0")
    H = hamiltonian_matrix(params, basis)
    if energy_ceiling is not None and len(basis) > 200:
        w, v = _diagonalize_window(H, energy_ceiling)
    else:
        w, v = diagonalize(H)
        if energy_ceiling is not None:
            keep = w < energy_ceiling
            w, v = w[keep], v[:, keep]
    spec = Spectrum(sector, params, basis, w, v)
    for obs in Observable:
        spec.expectations[obs.value] = expectations(spec, obs)
    return spec


def mblock_spectra(params: ModelParams, m_values) -> list[Spectrum]:
    """Spectra of consecutive ``M`` blocks (``delta`` must be 0)."""
    return [solve_sector(params, MBlock(int(M))) for M in m_values]


def ground_state_energy(params: ModelParams, m_limit: int | None = None) -> float:
    """Lowest eigenvalue over all ``M`` blocks with ``M <= m_limit`` (delta = 0)."""
    if m_limit is None:
        m_limit = 4 * params.two_j
    return min(solve_sector(params, MBlock(M)).energies[0] for M in range(m_limit + 1))


def localization_overlap(spectrum: Spectrum, reference: BasisState) -> np.ndarray:
    """``|<ref|psi_k>|**2`` for every eigenstate of ``spectrum``."""
    ref = BasisState(*reference)
    try:
        i = spectrum.basis.index(ref)
    except ValueError:
        raise DomainError(f"{ref} is not in sector {spectrum.sector}") from None
    return spectrum.eigenvectors[i] ** 2


def converge_cutoff(params: ModelParams, energy_ceiling: float, tol: float = 1e-8,
                    parity: int | None = None, n_start: int | None = None,
                    n_limit: int = 4096) -> int:
    """Smallest boson cutoff, from a doubling sequence, that fixes levels below a ceiling.

    ``n_max`` is accepted once doubling it shifts every eigenvalue below
    ``energy_ceiling`` by less than ``tol``.  Both parities are checked unless
    ``parity`` is given.
    """
    if n_start is None:
        n_start = max(8, math.ceil((energy_ceiling + params.omega0 * params.j) / params.omega))
    parities = (1, -1) if parity is None else (parity,)
    n_max = n_start

    def levels(nm, p):
        return sector_levels(params, ParityBlock(p, nm), energy_ceiling + 1.0)

    current = {p: levels(n_max, p) for p in parities}
    while True:
        if 2 * n_max > n_limit:
            raise ResourceError(
                f"cutoff not converged below E={energy_ceiling} up to n_max={n_max} "
                f"(limit {n_limit})")
        finer = {p: levels(2 * n_max, p) for p in parities}
        shift = 0.0
        ok = True
        for p in parities:
            ref = finer[p][finer[p] < energy_ceiling]
            cur = current[p]
            if len(cur) < len(ref):
                ok = False
                break
            shift = max(shift, float(np.abs(cur[: len(ref)] - ref).max(initial=0.0)))
        log.info("cutoff n_max=%d: max shift %.3e", n_max, shift if ok else float("nan"))
        if ok and shift < tol:
            return n_max
        n_max *= 2
        current = finer
