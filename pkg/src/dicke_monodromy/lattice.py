"""Quantum energy-momentum lattices, Peres lattices and cell transport.

A lattice is a set of columns; each column holds the levels of one value of
the conserved excitation number ``M`` (or, for ``delta > 0``, the levels whose
``<M>`` rounds to that value) sorted by energy.  A level is addressed by its
column and its intra-column index ``k``.

Transporting an elementary cell around a closed path and comparing the final
cell with the initial one gives the quantum monodromy matrix.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import (AmbiguityError, DomainError, ExtractionError, NotFoundError)
from .quantum import MBlock, Observable, Spectrum

log = logging.getLogger(__name__)

TIE_TOL = 1e-12
AMBIGUITY_TOL = 1e-9
# |D2| max/median above which a chain counts as broken; chains one or two
# spacings below the defect already reach ~30 at j = 20, broken ones >= 100
SPIKE_THRESHOLD = 50.0


class GapError(DomainError):
    """A column is missing from a range that must be contiguous."""


@dataclass(frozen=True)
class LatticePoint:
    column: int
    k: int
    abscissa: float
    energy: float


@dataclass
class Lattice:
    """Points ``(abscissa, energy)`` grouped into energy-sorted columns.

    ``columns[c]`` is the ascending energy array of column ``c``;
    ``abscissae[c]`` holds the matching abscissa values.  ``ties`` lists
    ``(column, k)`` pairs whose level is within 1e-12 of level ``k + 1``.
    """

    columns: dict
    abscissae: dict
    ties: list = field(default_factory=list)
    kind: str = "em"

    @property
    def column_keys(self) -> list[int]:
        return sorted(self.columns)

    def points(self) -> list[LatticePoint]:
        out = []
        for c in self.column_keys:
            for k, (a, e) in enumerate(zip(self.abscissae[c], self.columns[c])):
                out.append(LatticePoint(c, k, float(a), float(e)))
        return out

    def energy(self, column: int, k: int) -> float:
        return float(self.columns[column][k])

    def nearest(self, column: int, energy: float, strict: bool = True) -> int:
        """Index of the level closest to ``energy``.

        With ``strict`` two candidates closer than 1e-9 to equidistant raise
        :class:`AmbiguityError`; otherwise the lower one wins.
        """
        if column not in self.columns:
            raise DomainError(f"column {column} outside the lattice")
        d = np.abs(self.columns[column] - energy)
        order = np.argsort(d, kind="stable")
        if strict and len(order) > 1 and abs(d[order[1]] - d[order[0]]) < AMBIGUITY_TOL:
            raise AmbiguityError(
                f"column {column}: levels {order[0]} and {order[1]} equally close to E={energy}")
        return int(order[0])

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["column", "k", "abscissa", "E"])
        for pt in self.points():
            w.writerow([pt.column, pt.k, f"{pt.abscissa:.12g}", f"{pt.energy:.12g}"])


def _find_ties(col, energies):
    return [(col, int(k)) for k in np.flatnonzero(np.diff(energies) <= TIE_TOL)]


def em_lattice(spectra) -> Lattice:
    """Energy-momentum lattice ``(M, E_k)`` from consecutive ``M``-block spectra."""
    cols, absc, ties = {}, {}, []
    for sp in spectra:
        if not isinstance(sp.sector, MBlock):
            raise DomainError("em_lattice needs M-block spectra (delta = 0)")
        M = sp.sector.M
        cols[M] = np.asarray(sp.energies, dtype=float)
        absc[M] = np.full(len(sp.energies), float(M))
        ties.extend(_find_ties(M, cols[M]))
    keys = sorted(cols)
    if keys and keys[-1] - keys[0] + 1 != len(keys):
        missing = sorted(set(range(keys[0], keys[-1] + 1)) - set(keys))
        raise GapError(f"missing M columns {missing}")
    if ties:
        log.warning("%d degenerate level pairs in the lattice", len(ties))
    return Lattice(cols, absc, ties, "em")


def peres_lattice(spectra, observable) -> Lattice:
    """Peres lattice ``(<A>_k, E_k)``.

    Columns are the ``M`` blocks for ``delta = 0`` spectra and ``round(<M>)``
    bins otherwise, so the same transport and disorder tools apply.
    """
    obs = Observable(observable)
    groups: dict[int, list] = {}
    for sp in spectra:
        a = sp.expectation(obs)
        if isinstance(sp.sector, MBlock):
            keys = np.full(len(sp.energies), sp.sector.M)
        else:
            keys = np.rint(sp.expectation(Observable.MOp)).astype(int)
        for key, e, v in zip(keys, sp.energies, a):
            groups.setdefault(int(key), []).append((float(e), float(v)))
    cols, absc, ties = {}, {}, []
    for key in sorted(groups):
        rows = sorted(groups[key])
        cols[key] = np.array([r[0] for r in rows])
        absc[key] = np.array([r[1] for r in rows])
        ties.extend(_find_ties(key, cols[key]))
    return Lattice(cols, absc, ties, f"peres:{obs.value}")


def binned_lattice(spectra) -> Lattice:
    """Lattice with raw ``<M>`` abscissae, columns binned by ``round(<M>)``."""
    return peres_lattice(spectra, Observable.MOp)


# ---------------------------------------------------------------------------
# cell transport


@dataclass(frozen=True)
class Cell:
    """Elementary cell at ``(column, k)`` with horizontal neighbour ``kh`` in ``column + 1``."""

    column: int
    k: int
    kh: int

    def vectors(self, lattice: Lattice):
        """``vM = (1, E_kh(M+1) - E_k(M))`` and ``vk = (0, E_{k+1}(M) - E_k(M))``."""
        e = lattice.energy(self.column, self.k)
        vm = np.array([1.0, lattice.energy(self.column + 1, self.kh) - e])
        vk = np.array([0.0, lattice.energy(self.column, self.k + 1) - e])
        return vm, vk

    def slope(self, lattice: Lattice) -> float:
        return lattice.energy(self.column + 1, self.kh) - lattice.energy(self.column, self.k)


@dataclass
class MonodromyMatrix:
    """Integer transport matrix ``T`` with ``(vM', vk') = T (vM, vk)``."""

    matrix: np.ndarray
    residual: float
    raw: np.ndarray
    loop: dict = field(default_factory=dict)

    @property
    def determinant(self) -> int:
        return int(round(np.linalg.det(self.matrix)))

    def to_json(self) -> str:
        return json.dumps({"matrix": self.matrix.tolist(), "residual": self.residual,
                           "loop": self.loop}, indent=2, sort_keys=True)


def _check_column(lattice, c, k=None):
    if c not in lattice.columns:
        raise DomainError(f"path leaves the lattice at column {c}")
    if k is not None and not 0 <= k < len(lattice.columns[c]):
        raise DomainError(f"path leaves the lattice at ({c}, {k})")


def initial_cell(lattice: Lattice, column: int, k: int) -> Cell:
    """Cell whose horizontal neighbour continues the fixed-``k`` chain.

    Falls back to the nearest level in ``column + 1`` when that column has no
    level ``k``.
    """
    _check_column(lattice, column, k)
    _check_column(lattice, column + 1)
    if k < len(lattice.columns[column + 1]):
        return Cell(column, k, k)
    return Cell(column, k, lattice.nearest(column + 1, lattice.energy(column, k)))


def step(lattice: Lattice, cell: Cell, move: str) -> Cell:
    """Carry ``cell`` one site along ``move`` in ``{"+M", "-M", "+k", "-k"}``.

    Index steps shift ``k`` by one and re-anchor the horizontal neighbour to
    the level nearest ``E + slope``.  Column steps re-anchor the site itself to
    the level nearest the linear extrapolation along the current slope.
    """
    s = cell.slope(lattice)
    c = cell.column
    if move in ("+k", "-k"):
        k = cell.k + (1 if move == "+k" else -1)
        _check_column(lattice, c, k)
        return Cell(c, k, lattice.nearest(c + 1, lattice.energy(c, k) + s))
    if move == "+M":
        k = cell.kh
        _check_column(lattice, c + 2)
        e = lattice.energy(c + 1, k)
        return Cell(c + 1, k, lattice.nearest(c + 2, e + s))
    if move == "-M":
        _check_column(lattice, c - 1)
        k = lattice.nearest(c - 1, lattice.energy(c, cell.k) - s)
        return Cell(c - 1, k, cell.k)
    raise DomainError(f"unknown move {move!r}")


def transport_path(lattice: Lattice, cell: Cell, moves) -> tuple[Cell, list[Cell]]:
    """Apply ``moves`` in order; returns the final cell and the visited cells."""
    visited = [cell]
    for mv in moves:
        cell = step(lattice, cell, mv)
        visited.append(cell)
    return cell, visited


def cell_matrix(lattice: Lattice, start: Cell, end: Cell):
    """Express the cell at ``end`` in the basis of ``start`` (same site).

    Returns ``(raw, rounded, residual)`` for ``(vM', vk') = T (vM, vk)``.
    """
    if (start.column, start.k) != (end.column, end.k):
        raise ExtractionError("path is not closed")
    vm0, vk0 = start.vectors(lattice)
    vm1, vk1 = end.vectors(lattice)
    basis = np.column_stack([vm0, vk0])
    raw = np.linalg.solve(basis, np.column_stack([vm1, vk1])).T
    rounded = np.rint(raw)
    return raw, rounded.astype(int), float(np.abs(raw - rounded).max())


def rectangle_moves(lattice: Lattice, start: Cell, m_top: int, e_ref: float, dk: int,
                    clockwise: bool = False) -> list[str]:
    """Staircase rectangle around ``e_ref`` starting at the lower-left corner.

    The bottom and top legs stay ``dk`` levels below and above the level
    nearest ``e_ref`` in every column they cross: after each column step the
    site is moved by index steps back onto that height.  Chains can be
    strongly sheared, so following the carried slope alone would let a leg
    drift across the defect.  Counter-clockwise runs bottom, right side, top,
    left side; clockwise the reverse.
    """
    m0 = start.column
    moves: list[str] = []
    cell = start

    def run(seg):
        nonlocal cell
        cell, _ = transport_path(lattice, cell, seg)
        moves.extend(seg)

    def to_height(offset):
        n = lattice.nearest(cell.column, e_ref, strict=False) + offset - cell.k
        run(["+k" if n > 0 else "-k"] * abs(n))

    def along(target, offset):
        mv = "+M" if target > cell.column else "-M"
        while cell.column != target:
            run([mv])
            to_height(offset)

    if clockwise:
        to_height(dk)
        along(m_top, dk)
        to_height(-dk)
        along(m0, -dk)
    else:
        along(m_top, -dk)
        to_height(dk)
        along(m0, dk)
        to_height(-dk)
    n = start.k - cell.k
    run(["+k" if n > 0 else "-k"] * abs(n))
    return moves


def transport_loop(lattice: Lattice, center: tuple[float, float],
                   half_widths: tuple[int, int] = (6, 6),
                   clockwise: bool = False) -> MonodromyMatrix:
    """Carry the elementary cell around a rectangle and return the monodromy matrix.

    Parameters
    ----------
    center : (M*, E*)
        Loop centre; the rectangle spans columns ``M* - dM .. M* + dM`` and, in
        each corner column, ``dk`` levels below/above the level nearest ``E*``.
    half_widths : (dM, dk)
        Half extents; ``(0, 0)`` is the zero loop.
    clockwise : bool
        Traverse the rectangle in the opposite sense (gives the inverse).
    """
    m_c, e_c = center
    dm, dk = (int(v) for v in half_widths)
    m0 = int(round(m_c)) - dm
    m1 = int(round(m_c)) + dm
    _check_column(lattice, m0)
    _check_column(lattice, m1)
    k0 = lattice.nearest(m0, e_c, strict=False) - dk
    _check_column(lattice, m0, max(k0, 0) if k0 < 0 else k0)
    start = initial_cell(lattice, m0, k0)
    loop = {"center": [float(m_c), float(e_c)], "half_widths": [dm, dk],
            "clockwise": bool(clockwise)}
    if dm == 0 and dk == 0:
        raw = np.eye(2)
        return MonodromyMatrix(np.eye(2, dtype=int), 0.0, raw, loop)
    moves = rectangle_moves(lattice, start, m1, e_c, dk, clockwise)
    end, visited = transport_path(lattice, start, moves)
    raw, mat, residual = cell_matrix(lattice, start, end)
    loop["steps"] = len(moves)
    loop["start"] = [start.column, start.k]
    if residual >= 0.1:
        raise ExtractionError(f"transport is not integral: residual {residual:.3f}")
    return MonodromyMatrix(mat, residual, raw, loop)


# ---------------------------------------------------------------------------
# chains


@dataclass
class Chain:
    """Levels ``E_k(M)`` at fixed index ``k`` with second differences."""

    k: int
    columns: np.ndarray
    energies: np.ndarray
    d2: np.ndarray  # aligned with columns[1:-1]
    truncated: bool = False

    @property
    def spike_ratio(self) -> float:
        a = np.abs(self.d2)
        if len(a) < 3:
            return 0.0
        med = float(np.median(a))
        return float(a.max() / med) if med > 0 else (np.inf if a.max() > 0 else 0.0)

    @property
    def spike_column(self) -> int:
        return int(self.columns[1:-1][int(np.argmax(np.abs(self.d2)))])

    def classify(self, threshold: float = SPIKE_THRESHOLD) -> str:
        """``"sharp break"`` for a localized ``|D2|`` spike, else ``"smooth bend"``."""
        if len(self.d2) and np.abs(self.d2).max() < 1e-12:
            return "linear"
        return "sharp break" if self.spike_ratio > threshold else "smooth bend"


def chains(lattice: Lattice, k=None, m_range=None) -> list[Chain]:
    """Fixed-``k`` chains across the columns in ``m_range`` (default: all).

    A chain stops where a column has no level ``k``; such chains are flagged
    ``truncated``.
    """
    keys = lattice.column_keys if m_range is None else [c for c in lattice.column_keys
                                                        if m_range[0] <= c <= m_range[1]]
    if not keys:
        raise DomainError("empty column range")
    ks = range(max(len(lattice.columns[c]) for c in keys)) if k is None else [k]
    out = []
    for kk in ks:
        cols, es = [], []
        truncated = False
        for c in keys:
            if kk < len(lattice.columns[c]):
                cols.append(c)
                es.append(lattice.columns[c][kk])
            elif cols:
                truncated = True
                break
        if len(cols) < 3:
            continue
        es = np.array(es)
        d2 = es[2:] - 2 * es[1:-1] + es[:-2]
        out.append(Chain(kk, np.array(cols), es, d2, truncated or cols[0] != keys[0]))
    return out


def default_chain_range(lattice: Lattice) -> tuple[int, int]:
    """Upper half of the columns, ``M_max // 2 .. M_max``.

    Chains need a full column range to be compared; starting halfway keeps
    the low-``M`` columns, which truncate every chain above their size, out.
    """
    top = lattice.column_keys[-1]
    return max(top // 2, lattice.column_keys[0]), top


def defect_locate(lattice: Lattice, m_range=None,
                  threshold: float = SPIKE_THRESHOLD) -> tuple[int, float]:
    """Locate the lattice defect from the chain second differences.

    ``M*`` is the most common ``|D2|`` spike column among chains classified as
    sharp breaks.  Chains below the defect bend the same way on both sides of
    ``M*`` while those above reverse their curvature past it, so ``E*`` is the
    energy in column ``M*`` where ``D2(M* + 1)`` changes sign from positive to
    negative, interpolated linearly between neighbouring chains.
    ``m_range`` defaults to :func:`default_chain_range`.
    """
    if m_range is None:
        m_range = default_chain_range(lattice)
    ch = [c for c in chains(lattice, m_range=m_range) if not c.truncated]
    broken = [c for c in ch if c.classify(threshold) == "sharp break"]
    if not broken:
        raise NotFoundError("no chain shows a sharp break")
    vals, counts = np.unique([c.spike_column for c in broken], return_counts=True)
    m_star = int(vals[np.argmax(counts)])
    if counts.max() < 2:
        raise NotFoundError("isolated spike, no defect")
    rows = []
    for c in sorted(ch, key=lambda c: c.k):
        cols = list(c.columns)
        if m_star in cols[1:-2]:
            i = cols.index(m_star)
            rows.append((c.energies[i], c.d2[i]))  # d2[i] sits at column m_star + 1
    for (e0, d0), (e1, d1) in zip(rows, rows[1:]):
        if d0 > 0 >= d1:
            e_star = float(e0 + (e1 - e0) * d0 / (d0 - d1))
            smooth = [c for c in ch if c.classify(threshold) != "sharp break"
                      and m_star in c.columns
                      and c.energies[list(c.columns).index(m_star)] < e_star]
            if len(smooth) < 2:
                # the break reaches the bottom of the column: no isolated defect
                raise NotFoundError("no smooth chains below the break")
            return m_star, e_star
    raise NotFoundError(f"no curvature reversal across column {m_star}")
