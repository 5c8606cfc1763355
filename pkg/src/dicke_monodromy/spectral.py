"""Level densities, excited-state transition signatures and lattice disorder.

Densities are Gaussian-smoothed sums over levels.  Near the critical energy
of an unstable stationary point the density of a single ``M`` block grows
logarithmically, while the density of the stacked spectrum of many blocks
has a jump in its first derivative.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import curve_fit
from scipy.special import erf

from .classical import period
from .errors import DomainError, NotFoundError
from .lattice import Lattice
from .params import ModelParams
from .quantum import MBlock, sector_levels

log = logging.getLogger(__name__)

PAD_SIGMAS = 5.0


@dataclass(frozen=True)
class DensityCurve:
    """Smoothed level density on a uniform energy grid."""

    energies: np.ndarray
    rho: np.ndarray
    sigma: float
    count: int

    @property
    def step(self) -> float:
        return float(self.energies[1] - self.energies[0])

    def integral(self) -> float:
        return float(trapezoid(self.rho, self.energies))

    def peak(self) -> tuple[float, float]:
        i = int(np.argmax(self.rho))
        return float(self.energies[i]), float(self.rho[i])

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["E", "rho"])
        for e, r in zip(self.energies, self.rho):
            w.writerow([f"{e:.12g}", f"{r:.12g}"])


def mean_spacing(levels, window=None) -> float:
    lv = np.sort(np.asarray(levels, dtype=float))
    if window is not None:
        lv = lv[(lv >= window[0]) & (lv <= window[1])]
    if len(lv) < 2:
        raise DomainError("need at least two levels for a spacing")
    return float((lv[-1] - lv[0]) / (len(lv) - 1))


def _compensated_rows(terms: np.ndarray) -> np.ndarray:
    """Neumaier-compensated sum over axis 0, so the result does not depend on level order."""
    total = np.zeros(terms.shape[1])
    comp = np.zeros(terms.shape[1])
    for row in terms:
        t = total + row
        big = np.abs(total) >= np.abs(row)
        comp += np.where(big, (total - t) + row, (row - t) + total)
        total = t
    return total + comp


def smoothed_density(levels, sigma: float | None = None, grid=None,
                     points: int = 2001, chunk: int = 256) -> DensityCurve:
    """Gaussian-kernel density ``rho(E) = sum_k G_sigma(E - E_k)``.

    Parameters
    ----------
    sigma : float, optional
        Kernel width; defaults to 2.5 mean level spacings.
    grid : array_like, optional
        Energy grid.  The default spans ``min - 5 sigma`` to ``max + 5 sigma``,
        wide enough that the curve integrates to the level count.
    """
    lv = np.sort(np.asarray(levels, dtype=float))
    if lv.size == 0:
        raise DomainError("empty level list")
    if sigma is None:
        sigma = 2.5 * mean_spacing(lv)
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    if grid is None:
        grid = np.linspace(lv[0] - PAD_SIGMAS * sigma, lv[-1] + PAD_SIGMAS * sigma, points)
    grid = np.asarray(grid, dtype=float)
    norm = 1.0 / (sigma * math.sqrt(2 * math.pi))
    rho = np.empty_like(grid)
    for a in range(0, len(grid), chunk):
        g = grid[a:a + chunk]
        terms = norm * np.exp(-0.5 * ((g[None, :] - lv[:, None]) / sigma) ** 2)
        rho[a:a + chunk] = _compensated_rows(terms)
    return DensityCurve(grid, rho, float(sigma), int(lv.size))


# ---------------------------------------------------------------------------
# excited-state transition signatures


@dataclass(frozen=True)
class EsqptFit:
    e_c: float
    half_width: float
    coefficient: float
    offset: float
    residual: float


def esqpt_fit(curve: DensityCurve, window: tuple[float, float] | None = None,
              max_residual: float = 0.15, min_contrast: float = 0.05) -> EsqptFit:
    """Fit ``rho ~ a - b ln|E - E_c|`` around the density peak.

    ``E_c`` is scanned over the window and the linear coefficients are solved
    by least squares; points within one kernel width of ``E_c`` are excluded
    since smoothing caps the divergence there.  The fit is rejected when
    ``b <= 0``, when the relative RMS residual exceeds ``max_residual``, or
    when the logarithm adds less than ``min_contrast`` (relative to the mean
    density) between one kernel width and the window edge.
    """
    e_pk, _ = curve.peak()
    s = curve.sigma
    if window is None:
        window = (e_pk - 12 * s, e_pk + 12 * s)
    sel = (curve.energies >= window[0]) & (curve.energies <= window[1])
    E, r = curve.energies[sel], curve.rho[sel]
    if len(E) < 10:
        raise DomainError("window holds too few grid points")
    best = None
    for ec in np.linspace(e_pk - s, e_pk + s, 81):
        m = np.abs(E - ec) > s
        if m.sum() < 6:
            continue
        A = np.column_stack([np.ones(m.sum()), -np.log(np.abs(E[m] - ec))])
        coef, *_ = np.linalg.lstsq(A, r[m], rcond=None)
        res = float(np.sqrt(np.mean((A @ coef - r[m]) ** 2)) / np.mean(r[m]))
        if best is None or res < best[0]:
            best = (res, ec, coef)
    if best is None:
        raise NotFoundError("no usable fit window")
    res, ec, (a, b) = best
    span = max(abs(window[0] - ec), abs(window[1] - ec)) / s
    contrast = b * math.log(max(span, 1.0)) / float(np.mean(r))
    if b <= 0 or res > max_residual or contrast < min_contrast:
        raise NotFoundError(f"no logarithmic peak (b={b:.3g}, residual={res:.3g}, "
                            f"contrast={contrast:.3g})")
    return EsqptFit(float(ec), s, float(b), float(a), res)


def _window_jump(d1: np.ndarray, n: int, width: int) -> np.ndarray:
    """Mean slope on ``[E + n, E + width]`` minus mean slope on ``[E - width, E - n]`` (grid steps)."""
    c = np.concatenate([[0.0], np.cumsum(d1)])
    out = np.full_like(d1, np.nan)
    span = width - n + 1
    for i in range(width, len(d1) - width):
        right = (c[i + width + 1] - c[i + n]) / span
        left = (c[i - n + 1] - c[i - width]) / span
        out[i] = right - left
    return out


def _erf_step(E, ec, lo, hi, sigma):
    return lo + (hi - lo) * 0.5 * (1 + erf((E - ec) / (math.sqrt(2) * sigma)))


def derivative_jump(curve: DensityCurve, window: tuple[float, float] | None = None,
                    width: float = 4.0) -> tuple[float, float]:
    """Location and size of the strongest downward step of ``d rho / dE``.

    A kink of the raw density turns, after Gaussian smoothing, into an error
    function step of the first derivative centred on the kink.  The step is
    located coarsely by comparing mean slopes on either side (``width``
    kernel widths, one width excluded around the centre), then refined by
    fitting the error-function profile.

    Returns ``(E_jump, jump)``; ``jump`` is the slope after minus the slope
    before and is negative for a downward jump.
    """
    E = curve.energies
    d1 = np.gradient(curve.rho, E)
    n = max(int(round(curve.sigma / curve.step)), 1)
    w = max(int(round(width * curve.sigma / curve.step)), n + 1)
    jump = _window_jump(d1, n, w)
    if window is not None:
        jump[(E < window[0]) | (E > window[1])] = np.nan
    if np.all(np.isnan(jump)):
        raise DomainError("window outside the usable grid")
    i = int(np.nanargmin(jump))
    sel = slice(max(i - w, 0), min(i + w + 1, len(E)))
    lo = float(np.mean(d1[max(i - w, 0):max(i - n, 1)]))
    hi = float(np.mean(d1[i + n:i + w + 1]))
    try:
        (ec, lo, hi), _ = curve_fit(lambda e, a, b, c: _erf_step(e, a, b, c, curve.sigma),
                                    E[sel], d1[sel], p0=(E[i], lo, hi))
    except RuntimeError:
        ec = E[i]
    return float(ec), float(hi - lo)


def jump_significance(curve: DensityCurve, e_jump: float, jump: float,
                      width: float = 4.0) -> float:
    """Ratio of ``|jump|`` to the typical windowed slope change away from ``e_jump``."""
    E = curve.energies
    d1 = np.gradient(curve.rho, E)
    n = max(int(round(curve.sigma / curve.step)), 1)
    w = max(int(round(width * curve.sigma / curve.step)), n + 1)
    ch = np.abs(_window_jump(d1, n, w))
    far = (np.abs(E - e_jump) > 2 * width * curve.sigma) & np.isfinite(ch)
    typical = float(np.median(ch[far])) if far.any() else 0.0
    return abs(jump) / typical if typical > 0 else math.inf


# ---------------------------------------------------------------------------
# stacked spectrum


def stacked_levels(params: ModelParams, e_top: float, m_limit: int = 100000) -> np.ndarray:
    """All levels below ``e_top`` from every ``M`` block that reaches below it.

    Blocks are added in ascending ``M`` until, past ``M = 2j``, a block's
    lowest level lies above ``e_top``; from there on the block minima only
    grow, so the stack is complete below ``e_top``.
    """
    if params.delta != 0:
        raise DomainError("stacking M blocks needs delta = 0")
    out = []
    for M in range(m_limit + 1):
        lv = sector_levels(params, MBlock(M))
        if lv[0] > e_top and M > params.two_j:
            break
        out.append(lv[lv <= e_top])
    else:
        raise DomainError(f"stack not closed below E={e_top} within M <= {m_limit}")
    return np.sort(np.concatenate(out))


def stacked_density(params: ModelParams, sigma: float | None = None,
                    e_top: float | None = None, points: int = 3001):
    """Density of the stacked spectrum of all ``M`` blocks below ``e_top``.

    The default kernel is half the mean spacing of the ``M = 2j`` block, the
    scale on which the stacked curve is smooth but the derivative jump at the
    critical energy is not yet washed out.  Returns ``(curve, levels)``.
    """
    ec = params.omega0 * params.j
    if e_top is None:
        e_top = 2.0 * ec
    lv = stacked_levels(params, e_top)
    if sigma is None:
        sigma = 0.5 * mean_spacing(sector_levels(params, MBlock(params.two_j)))
    grid = np.linspace(lv[0], e_top - PAD_SIGMAS * sigma, points)
    return smoothed_density(lv, sigma=sigma, grid=grid), lv


# ---------------------------------------------------------------------------
# semiclassical spacing


def spacing_check(levels, energy: float, params: ModelParams, m_value: float) -> float:
    """``Delta E * tau / (2 pi hbar)`` at ``energy`` for one ``M`` block.

    ``levels`` are unscaled block eigenvalues, ``energy`` is unscaled too.
    The local spacing comes from the two levels bracketing ``energy``; the
    period ``tau`` from the classical reduced motion at the scaled energy,
    with ``hbar = 1/(2j)``.
    """
    if params.delta != 0:
        raise DomainError("spacing_check needs delta = 0")
    lv = np.sort(np.asarray(levels, dtype=float))
    if not lv[0] < energy < lv[-1]:
        raise DomainError(f"energy {energy} outside the block range [{lv[0]}, {lv[-1]}]")
    i = int(np.searchsorted(lv, energy))
    de = (lv[i] - lv[i - 1]) * params.hbar  # scaled spacing
    tau = period(params, m_value, energy * params.hbar)
    return float(de * tau / (2 * math.pi * params.hbar))


# ---------------------------------------------------------------------------
# lattice disorder


@dataclass(frozen=True)
class DisorderReport:
    score: float
    interior: int
    misfits: int
    nonconvex: int


def _local_spacing(col: np.ndarray, k: int) -> float:
    return 0.5 * (col[k + 1] - col[k - 1])


def disorder_score(lattice: Lattice, columns=None, energy_window=None,
                   tolerance: float = 0.25) -> DisorderReport:
    """Fraction of interior lattice points where the lattice stops being locally affine.

    For an interior point ``P`` with nearest-energy left neighbour ``L`` the
    continuation ``2P - L`` is predicted in the next column.  ``P`` counts as
    disordered when no level lies within ``tolerance`` local spacings of the
    prediction, when the abscissa misses by more than ``tolerance``, or when
    the cell ``P, R, R_up, P_up`` (``R`` the matched level) is not convex.
    """
    keys = lattice.column_keys
    if columns is not None:
        keys = [c for c in keys if columns[0] <= c <= columns[1]]
    interior = misfit = nonconvex = 0
    for c in keys:
        if c - 1 not in lattice.columns or c + 1 not in lattice.columns:
            continue
        col, ab = lattice.columns[c], lattice.abscissae[c]
        left, lab = lattice.columns[c - 1], lattice.abscissae[c - 1]
        right, rab = lattice.columns[c + 1], lattice.abscissae[c + 1]
        if len(left) < 2 or len(right) < 2:
            continue
        for k in range(1, len(col) - 1):
            e = col[k]
            if energy_window is not None and not energy_window[0] <= e <= energy_window[1]:
                continue
            il = int(np.argmin(np.abs(left - e)))
            e_pred = 2 * e - left[il]
            ir = int(np.argmin(np.abs(right - e_pred)))
            # predictions resolved only against a column edge are not informative
            if il == 0 or il == len(left) - 1 or ir == 0 or ir + 2 >= len(right):
                continue
            interior += 1
            h = _local_spacing(col, k)
            a_pred = 2 * ab[k] - lab[il]
            bad = abs(right[ir] - e_pred) > tolerance * h or abs(rab[ir] - a_pred) > tolerance
            quad = np.array([[ab[k], e], [rab[ir], right[ir]],
                             [rab[ir + 1], right[ir + 1]], [ab[k + 1], col[k + 1]]])
            if not _convex(quad):
                nonconvex += 1
                bad = True
            misfit += bad
    score = misfit / interior if interior else 0.0
    return DisorderReport(float(score), interior, int(misfit), nonconvex)


def _convex(q: np.ndarray) -> bool:
    v = np.roll(q, -1, axis=0) - q
    w = np.roll(v, -1, axis=0)
    cross = v[:, 0] * w[:, 1] - v[:, 1] * w[:, 0]
    return bool(np.all(cross > 0) or np.all(cross < 0))


def default_window(params: ModelParams) -> tuple[tuple[int, int], tuple[float, float]]:
    """Columns ``2 <= M <= 3j`` and energies ``-4 w0 j <= E <= 2 w0 j``.

    The window covers the whole low-lying lattice around the defect, so the
    score keeps growing with the perturbation instead of saturating in the
    strongly mixed region near the critical level.
    """
    j = params.j
    return (2, int(round(3 * j))), (-4 * params.omega0 * j, 2 * params.omega0 * j)


def breakdown_metric(lattices: dict, columns=None, energy_window=None,
                     params: ModelParams | None = None) -> dict:
    """Disorder score per perturbation strength; ``lattices`` maps delta to a lattice.

    When ``params`` is given, missing window bounds default to :func:`default_window`.
    """
    if params is not None:
        dc, de = default_window(params)
        columns = dc if columns is None else columns
        energy_window = de if energy_window is None else energy_window
    out = {}
    for delta in sorted(lattices):
        rep = disorder_score(lattices[delta], columns, energy_window)
        log.info("delta=%g: disorder %.4f (%d/%d)", delta, rep.score, rep.misfits, rep.interior)
        out[delta] = rep
    return out
