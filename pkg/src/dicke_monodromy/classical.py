"""Classical limit of the extended Dicke model.

Phase space is the field plane ``(x, p)`` times the Bloch sphere of radius 1/2
with longitude ``phi`` and height ``z``.  Orbits are integrated in the
spin-Cartesian chart ``y = (x, p, s1, s2, s3)`` which has no pole
singularities; ``(phi, z)`` and the rotated-frame coordinates
``(x', p', phi')`` are derived views.

The rotated frame uses ``x' + i p' = (x + i p) exp(i phi)`` together with the
scaled excitation number ``M = (x^2 + p^2 + 1)/2 + z``, conserved for
``delta = 0``, and ``phi' = phi + M - 1/2``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp, trapezoid
from scipy.interpolate import splev, splprep
from scipy.optimize import brentq, minimize_scalar

from .errors import (ContractError, DivergentPeriodError, DomainError,
                     InsufficientDataError, IntegrationError)
from .params import ModelParams

log = logging.getLogger(__name__)

SQRT2 = math.sqrt(2.0)
DOMAIN_SLACK = 1e-12


# ---------------------------------------------------------------------------
# states


@dataclass(frozen=True)
class PhaseState:
    """Point ``(x, p, phi, z)`` of the four-dimensional phase space."""

    x: float
    p: float
    phi: float
    z: float

    def __post_init__(self):
        if abs(self.z) > 0.5 + DOMAIN_SLACK:
            raise DomainError(f"|z| = {abs(self.z)} exceeds 1/2")

    def cartesian(self) -> np.ndarray:
        rho = math.sqrt(max(0.25 - self.z * self.z, 0.0))
        return np.array([self.x, self.p, rho * math.cos(self.phi),
                         rho * math.sin(self.phi), self.z])

    @classmethod
    def from_cartesian(cls, y) -> "PhaseState":
        x, p, s1, s2, s3 = (float(v) for v in y)
        phi = math.atan2(s2, s1) % (2 * math.pi)
        return cls(x, p, phi, max(-0.5, min(0.5, s3)))


@dataclass(frozen=True)
class TransformedState:
    """Rotated-frame coordinates at fixed ``M`` (``m_value``)."""

    xp: float
    pp: float
    m_value: float
    phip: float = 0.0

    @property
    def radius(self) -> float:
        return math.hypot(self.xp, self.pp)

    @property
    def z(self) -> float:
        return z_of_radius(self.m_value, self.radius)

    @property
    def on_outer_circle(self) -> bool:
        """True where the rotation angle is indeterminate (south pole)."""
        return abs(self.z + 0.5) <= 1e-12


def z_of_radius(m_value, r):
    """Bloch height ``z = M - (r^2 + 1)/2`` at field radius ``r``."""
    return m_value - (np.square(r) + 1.0) / 2.0


def domain_radii(m_value: float) -> tuple[float, float]:
    """Inner and outer radius of the accessible ``(x', p')`` annulus at fixed ``M``."""
    if m_value < 0:
        raise DomainError("M must be non-negative")
    r_min = 0.0 if m_value <= 1 else math.sqrt(2.0 * (m_value - 1.0))
    return r_min, math.sqrt(2.0 * m_value)


# ---------------------------------------------------------------------------
# Hamiltonians and invariant


def energy_cartesian(y, params: ModelParams):
    """Scaled energy for (arrays of) spin-Cartesian states."""
    x, p, s1, s2, s3 = y
    lg = params.lambda_gamma
    d = params.delta
    return (params.omega * (x * x + p * p) / 2 + params.omega0 * s3
            + SQRT2 * lg * ((1 + d) * x * s1 - (1 - d) * p * s2))


def invariant_cartesian(y):
    x, p, _, _, s3 = y
    return (x * x + p * p + 1.0) / 2.0 + s3


def hamiltonian_full(state: PhaseState, params: ModelParams) -> float:
    """Scaled classical energy of a phase-space point."""
    lg = params.lambda_gamma
    d = params.delta
    s = math.sqrt(max(0.5 - 2 * state.z ** 2, 0.0))
    return (params.omega * (state.x ** 2 + state.p ** 2) / 2 + params.omega0 * state.z
            + lg * s * ((1 + d) * state.x * math.cos(state.phi)
                        - (1 - d) * state.p * math.sin(state.phi)))


def invariant_m(state: PhaseState) -> float:
    """Scaled excitation number ``(x^2 + p^2 + 1)/2 + z``."""
    return (state.x ** 2 + state.p ** 2 + 1.0) / 2.0 + state.z


def _check_domain(m_value, r):
    r_min, r_max = domain_radii(m_value)
    if np.any(r < r_min - 1e-12) or np.any(r > r_max + 1e-12):
        raise DomainError(f"radius outside [{r_min}, {r_max}] for M={m_value}")


def reduced_energy(xp, pp, m_value, params: ModelParams):
    """Rotated-frame energy at fixed ``M`` (no ``phi'`` dependence); vectorized."""
    xp = np.asarray(xp, dtype=float)
    pp = np.asarray(pp, dtype=float)
    r2 = xp * xp + pp * pp
    _check_domain(m_value, np.sqrt(r2))
    z = z_of_radius(m_value, np.sqrt(r2))
    root = np.sqrt(np.maximum(0.5 - 2 * z * z, 0.0))
    out = (params.omega0 * m_value - params.omega / 2 + params.detuning * (r2 + 1) / 2
           + params.lambda_gamma * xp * root)
    return out[()] if out.ndim == 0 else out


def hamiltonian_transformed(state: TransformedState, params: ModelParams) -> float:
    """Energy in rotated-frame coordinates (valid for ``delta = 0``)."""
    return float(reduced_energy(state.xp, state.pp, state.m_value, params))


def transform_forward(state: PhaseState) -> TransformedState:
    m = invariant_m(state)
    c, s = math.cos(state.phi), math.sin(state.phi)
    xp = c * state.x - s * state.p
    pp = s * state.x + c * state.p
    return TransformedState(xp, pp, m, state.phi + m - 0.5)


def transform_backward(state: TransformedState, phi: float | None = None) -> PhaseState:
    """Inverse rotation; ``phi`` must come from integrating the angle equation.

    When ``phi`` is omitted it is recovered from ``state.phip``.  On the outer
    circle the rotation is indeterminate and the supplied ``phi`` is kept.
    """
    if phi is None:
        phi = state.phip - state.m_value + 0.5
    r = state.radius
    _check_domain(state.m_value, r)
    z = max(-0.5, min(0.5, z_of_radius(state.m_value, r)))
    c, s = math.cos(phi), math.sin(phi)
    x = c * state.xp + s * state.pp
    p = -s * state.xp + c * state.pp
    return PhaseState(x, p, phi % (2 * math.pi), z)


def transformed_to_cartesian(state: TransformedState, phi: float) -> np.ndarray:
    """Spin-Cartesian point of a rotated-frame state without the round-off of ``z``.

    Near the north pole ``z`` rounds to 1/2 long before the spin leaves the
    axis, so the axis distance is computed from ``1/2 - z`` directly.
    """
    r = state.radius
    _check_domain(state.m_value, r)
    below = 1.0 - state.m_value + r * r / 2  # 1/2 - z
    rho = math.sqrt(max(below * (1.0 - below), 0.0))
    c, s = math.cos(phi), math.sin(phi)
    return np.array([c * state.xp + s * state.pp, -s * state.xp + c * state.pp,
                     rho * c, rho * s, 0.5 - below])


def rotated_coordinates(y):
    """``(x', p', phi')`` for arrays of spin-Cartesian states."""
    x, p, s1, s2, s3 = y
    phi = np.arctan2(s2, s1)
    c, s = np.cos(phi), np.sin(phi)
    m = invariant_cartesian(y)
    return c * x - s * p, s * x + c * p, phi + m - 0.5


# ---------------------------------------------------------------------------
# equations of motion


def eom_cartesian(t, y, params: ModelParams):
    """Time derivative in the spin-Cartesian chart; ``ds/dt = grad_s H x s``."""
    x, p, s1, s2, s3 = y
    k = SQRT2 * params.lambda_gamma
    a = k * (1 + params.delta) * x
    b = -k * (1 - params.delta) * p
    w0 = params.omega0
    return np.array([
        params.omega * p - k * (1 - params.delta) * s2,
        -params.omega * x - k * (1 + params.delta) * s1,
        b * s3 - w0 * s2,
        w0 * s1 - a * s3,
        a * s2 - b * s1,
    ])


def eom_angles(state: PhaseState, params: ModelParams) -> np.ndarray:
    """``(dx, dp, dphi, dz)/dt`` in the ``(phi, z)`` chart; singular at the poles."""
    lg = params.lambda_gamma
    d = params.delta
    S = math.sqrt(0.5 - 2 * state.z ** 2)
    c, s = math.cos(state.phi), math.sin(state.phi)
    bracket = (1 + d) * state.x * c - (1 - d) * state.p * s
    return np.array([
        params.omega * state.p - lg * S * (1 - d) * s,
        -params.omega * state.x - lg * S * (1 + d) * c,
        params.omega0 - lg * 2 * state.z / S * bracket,
        lg * S * ((1 + d) * state.x * s + (1 - d) * state.p * c),
    ])


def eom_transformed(t, y, params: ModelParams, m_value: float) -> np.ndarray:
    """``(dx', dp', dphi)/dt`` at fixed ``M``; only defined for ``delta = 0``."""
    if params.delta != 0:
        raise ContractError("the rotated-frame equations require delta = 0")
    xp, pp = y[0], y[1]
    z = z_of_radius(m_value, math.hypot(xp, pp))
    root = math.sqrt(max(0.5 - 2 * z * z, 0.0))
    if root == 0.0:
        raise DomainError("rotated-frame equations are singular on the pole circles")
    lg, dw = params.lambda_gamma, params.detuning
    return np.array([
        dw * pp + lg * 2 * xp * pp * z / root,
        -dw * xp - lg * (0.5 - 2 * z * z + 2 * xp * xp * z) / root,
        params.omega0 - lg * 2 * xp * z / root,
    ])


def eom(state, params: ModelParams, chart: str = "spin") -> np.ndarray:
    """Dispatch to the spin-Cartesian (``"spin"``) or rotated (``"transformed"``) chart."""
    if chart == "spin":
        y = state.cartesian() if isinstance(state, PhaseState) else np.asarray(state)
        return eom_cartesian(0.0, y, params)
    if chart == "transformed":
        if not isinstance(state, TransformedState):
            raise ContractError("transformed chart needs a TransformedState")
        return eom_transformed(0.0, (state.xp, state.pp), params, state.m_value)
    raise ContractError(f"unknown chart {chart!r}")


def photon_rate(state: TransformedState, derivative) -> float:
    """Scaled photon number rate ``x' dx'/dt + p' dp'/dt``."""
    return state.xp * derivative[0] + state.pp * derivative[1]


# ---------------------------------------------------------------------------
# orbit integration


@dataclass
class Event:
    kind: str  # "north", "south", "equator"
    t: float


@dataclass
class SectionCrossing:
    """Passage through the ``phi' = 0`` plane."""

    t: float
    xp: float
    pp: float
    direction: int
    orbit_id: int = 0
    m_avg: float = float("nan")


@dataclass
class OrbitTrace:
    """Sampled orbit with conserved-quantity logs and detected events."""

    t: np.ndarray
    y: np.ndarray  # shape (5, len(t)), spin-Cartesian
    params: ModelParams
    events: list = field(default_factory=list)
    crossings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def x(self):
        return self.y[0]

    @property
    def p(self):
        return self.y[1]

    @property
    def z(self):
        return self.y[4]

    @property
    def phi(self):
        return np.arctan2(self.y[3], self.y[2]) % (2 * np.pi)

    @property
    def rho(self):
        """Distance from the Bloch axis (projection on the equator plane)."""
        return np.hypot(self.y[2], self.y[3])

    @property
    def energy(self):
        return energy_cartesian(self.y, self.params)

    @property
    def m_values(self):
        return invariant_cartesian(self.y)

    def rotated(self):
        return rotated_coordinates(self.y)

    def energy_drift(self) -> float:
        e = self.energy
        return float(np.abs(e - e[0]).max())

    def m_drift(self) -> float:
        m = self.m_values
        return float(np.abs(m - m[0]).max())

    def m_average(self) -> float:
        """Trapezoidal time average of ``M`` over the whole window."""
        if self.t[-1] == self.t[0]:
            return float(self.m_values[0])
        return float(trapezoid(self.m_values, self.t) / (self.t[-1] - self.t[0]))

    def event_times(self, kind: str) -> list[float]:
        return [e.t for e in self.events if e.kind == kind]

    def to_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "x", "p", "phi", "z", "xp", "pp", "E", "M"])
        xp, pp, _ = self.rotated()
        cols = [self.t, self.x, self.p, self.phi, self.z, xp, pp, self.energy, self.m_values]
        for row in zip(*cols):
            w.writerow([f"{v:.12g}" for v in row])


def _pole_event(t, y, params):
    # extrema of s3; pole passages are the extrema inside the cap
    x, p, s1, s2, _ = y
    k = SQRT2 * params.lambda_gamma
    return k * ((1 + params.delta) * x * s2 + (1 - params.delta) * p * s1)


def _cap_event(cap):
    def ev(t, y, *args):
        return y[2] * y[2] + y[3] * y[3] - cap * cap
    return ev


def _equator_event(t, y, *args):
    return y[4]


def _section_event(t, y, *args):
    c = invariant_cartesian(y) - 0.5
    return y[3] * math.cos(c) + y[2] * math.sin(c)


def integrate(initial, params: ModelParams, t_end: float, tol: float = 1e-10,
              atol: float | None = None, dt_sample: float | None = 0.01,
              pole_cap: float = 1e-3, section: bool = False, extra_events=(),
              backward: bool = False, orbit_id: int = 0) -> OrbitTrace:
    """Integrate an orbit with an embedded 8(5,3) Runge-Kutta scheme.

    Parameters
    ----------
    initial : PhaseState or array_like
        Start point; arrays are read as ``(x, p, s1, s2, s3)``.
    tol : float
        Relative local error tolerance.  ``atol`` defaults to ``tol * 1e-2``.
    dt_sample : float or None
        Output spacing; None keeps the solver's own steps.
    pole_cap : float
        A pole event is logged at each extremum of ``z`` lying within this
        distance from the Bloch axis.
    section : bool
        Record ``phi' = 0`` crossings in ``trace.crossings``.
    extra_events : sequence of callables
        Additional solve_ivp events, e.g. terminal stopping conditions; their
        times end up in ``trace.meta["extra_events"]``.
    backward : bool
        Integrate towards negative times; samples are returned in forward order.
    """
    if tol <= 0:
        raise DomainError("tol must be positive")
    y0 = initial.cartesian() if isinstance(initial, PhaseState) else np.asarray(initial, float)
    if atol is None:
        atol = tol * 1e-2
    sign = -1.0 if backward else 1.0
    events = [_pole_event, _equator_event, _cap_event(pole_cap)]
    if section:
        events.append(_section_event)
    events.extend(extra_events)
    span = (0.0, sign * t_end)
    t_eval = None
    if dt_sample is not None:
        n = max(int(math.ceil(t_end / dt_sample)), 1)
        t_eval = sign * np.linspace(0.0, t_end, n + 1)
    sol = solve_ivp(eom_cartesian, span, y0, method="DOP853", rtol=tol, atol=atol,
                    t_eval=t_eval, events=events, args=(params,), dense_output=False)
    if sol.status < 0:
        raise IntegrationError(sol.message)
    t, y = sol.t, sol.y
    norm_err = float(np.abs((y[2:] ** 2).sum(axis=0) - 0.25).max())
    # project the stored samples back onto the sphere
    scale = 0.5 / np.sqrt((y[2:] ** 2).sum(axis=0))
    y = y.copy()
    y[2:] *= scale
    ev = []
    # a pole passage is a cap entry, or a z extremum inside the cap whose
    # entry and exit fell within one solver step
    crossings = sorted((sign * float(tt), yy) for tt, yy in zip(sol.t_events[2], sol.y_events[2])
                       if tt != 0.0)
    inside0 = y0[2] ** 2 + y0[3] ** 2 < pole_cap ** 2
    toggles = [c[0] for c in crossings]
    for k, (tau, yy) in enumerate(crossings):
        if inside0 == bool(k % 2):  # entering
            ev.append(Event("north" if yy[4] > 0 else "south", sign * tau))
    for tt, yy in zip(sol.t_events[0], sol.y_events[0]):
        if yy[2] ** 2 + yy[3] ** 2 >= pole_cap ** 2 or tt == 0.0:
            continue
        n_before = sum(1 for c in toggles if c < sign * tt)
        if inside0 != bool(n_before % 2):  # flagged as already inside
            continue
        ev.append(Event("north" if yy[4] > 0 else "south", float(tt)))
    for tt in sol.t_events[1]:
        if tt != 0.0:
            ev.append(Event("equator", float(tt)))
    if backward:
        t = t[::-1]
        y = y[:, ::-1]
    ev.sort(key=lambda e: e.t)
    trace = OrbitTrace(t, y, params, ev)
    trace.meta["spin_norm_error"] = norm_err
    trace.meta["terminated"] = sol.status == 1
    trace.meta["end_state"] = sol.y[:, -1].copy()
    trace.meta["end_time"] = float(sol.t[-1])
    base = 4 if section else 3
    trace.meta["extra_events"] = [np.asarray(te) for te in sol.t_events[base:]]
    trace.meta["extra_states"] = [np.asarray(ye) for ye in sol.y_events[base:]]
    if section:
        m_avg = trace.m_average()
        for tt, yy in zip(sol.t_events[3], sol.y_events[3]):
            if tt == 0.0:
                continue
            c = invariant_cartesian(yy) - 0.5
            if yy[2] * math.cos(c) - yy[3] * math.sin(c) <= 0:  # phi' = pi branch
                continue
            xp, pp, _ = rotated_coordinates(yy)
            trace.crossings.append(SectionCrossing(
                float(tt), float(xp), float(pp), _phip_direction(yy, params),
                orbit_id, m_avg))
    return trace


def _phip_direction(y, params):
    dy = eom_cartesian(0.0, y, params)
    x, p, s1, s2, _ = y
    rho2 = s1 * s1 + s2 * s2
    dphi = (s1 * dy[3] - s2 * dy[2]) / rho2
    dm = x * dy[0] + p * dy[1] + dy[4]
    return 1 if dphi + dm > 0 else -1


def section_angle(y) -> float:
    """``phi'`` wrapped to ``(-pi, pi]``; used to verify refined crossings."""
    c = invariant_cartesian(y) - 0.5
    return math.atan2(y[3] * math.cos(c) + y[2] * math.sin(c),
                      y[2] * math.cos(c) - y[3] * math.sin(c))


# ---------------------------------------------------------------------------
# critical values


@dataclass(frozen=True)
class CriticalValues:
    lambda_c: float
    lambda_c_prime: float
    e0: float
    e0_prime: float
    e1_prime: float
    ec_prime: float | None
    s_plus: float
    s_minus: float | None
    tc: float | None

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def _s_pm(params: ModelParams):
    lg = params.lambda_gamma
    lcp = abs(params.detuning) / 2
    if lg == 0:
        return 1.0, None
    a = lcp / lg
    root = (2.0 / 9.0) * a * math.sqrt(a * a + 3.0)
    base = 2.0 / 3.0 - (2.0 / 9.0) * a * a
    return base + root, base - root


def critical_values(params: ModelParams) -> CriticalValues:
    """Closed-form critical couplings and energies of the classical model."""
    w, w0, d = params.omega, params.omega0, params.delta
    lg = params.lambda_gamma
    lc = math.sqrt(w * w0) / (1 + d)
    if lg < lc:
        e0 = -w0 / 2
    else:
        e0 = -(w0 / 2) * (lg ** 4 + lc ** 4) / (2 * lg ** 2 * lc ** 2)
    lcp = abs(params.detuning) / 2
    dw = params.detuning
    s_plus, s_minus = _s_pm(params)
    if lg <= lcp:
        e0p = w0 / 2
    else:
        e0p = w0 / 2 + dw * s_minus - 2 * lg * s_minus * math.sqrt(1 - s_minus)
    e1p = w0 / 2 + dw * s_plus + 2 * lg * s_plus * math.sqrt(max(1 - s_plus, 0.0))
    ecp = w0 / 2 if lg > lcp else None
    tc = None
    if lg > lc:
        tc = (w0 / 2) / math.atanh((lc / lg) ** 2)
    return CriticalValues(lc, lcp, e0, e0p, e1p, ecp, s_plus, s_minus, tc)


def critical_temperature(params: ModelParams) -> float:
    from .errors import UndefinedError
    tc = critical_values(params).tc
    if tc is None:
        raise UndefinedError("no superradiant phase: lambda_gamma <= lambda_c")
    return tc


# ---------------------------------------------------------------------------
# pinched torus


def _require_unstable(params):
    if params.delta != 0:
        raise ContractError("the pinched torus is defined for delta = 0")
    if params.lambda_gamma <= abs(params.detuning) / 2:
        raise DomainError("lambda_gamma <= lambda'_c: no unstable stationary point")


def separatrix_point(params: ModelParams, radius: float, branch: str = "unstable"):
    """Point at distance ``radius`` from the origin on the ``M = 1`` critical contour.

    ``branch="unstable"`` returns the leg leaving the stationary point,
    ``"stable"`` the leg arriving at it.
    """
    _require_unstable(params)
    lg, dw = params.lambda_gamma, params.detuning
    cos_t = -dw / (2 * lg * math.sqrt((2 - radius ** 2) / 2))
    if abs(cos_t) > 1:
        raise DomainError("radius beyond the critical contour")
    sin_t = math.sqrt(1 - cos_t ** 2)
    best = None
    # orient at a radius where the reduced equations are well resolved; the
    # sign of p' does not change along a leg
    r_ref = max(radius, 1e-3)
    cos_ref = -dw / (2 * lg * math.sqrt((2 - r_ref ** 2) / 2))
    sin_ref = math.sqrt(1 - cos_ref ** 2)
    for sgn in (1.0, -1.0):
        ref = TransformedState(r_ref * cos_ref, sgn * r_ref * sin_ref, 1.0)
        rate = photon_rate(ref, eom(ref, params, "transformed"))
        if (branch == "unstable") == (rate > 0):
            best = TransformedState(radius * cos_t, sgn * radius * sin_t, 1.0)
    if best is None:
        raise DomainError("could not orient the critical contour")
    return best


def pinched_orbit(params: ModelParams, phi0: float = 0.0, epsilon: float = 1e-6,
                  tol: float = 1e-12, atol: float | None = None, dwell_radius: float = 0.1,
                  t_max: float | None = None, branch: str = "unstable",
                  dt_sample: float = 0.005) -> OrbitTrace:
    """Orbit on the pinched torus ``(M, E) = (1, omega0/2)``.

    Starts ``epsilon`` (in ``r'``) from the stationary point on the unstable
    leg and runs forward until the closest approach on the way back.  With
    ``branch="stable"`` it starts on the incoming leg and runs backward, so the
    returned trace approaches the stationary point as time increases.

    ``trace.meta`` carries ``return_time`` and ``return_radius`` (None if no
    return was seen) and ``escape_time``, the time spent inside
    ``dwell_radius``.  The trace is cut at the return.
    """
    _require_unstable(params)
    rate = math.sqrt(params.lambda_gamma ** 2 - (params.detuning / 2) ** 2)
    if t_max is None:
        t_max = 2 * math.log(1.0 / epsilon) / rate + 40.0 / rate + 20.0
    if atol is None:
        atol = tol * min(1.0, epsilon) * 1e-3
    start = separatrix_point(params, epsilon, branch)
    y0 = transformed_to_cartesian(start, phi0)

    def leave(t, y, *args):
        return y[0] ** 2 + y[1] ** 2 - dwell_radius ** 2
    leave.direction = 1.0  # directions refer to the integration direction

    sign = -1.0 if branch == "stable" else 1.0

    def closest(t, y, *args):
        dy = eom_cartesian(t, y, params)
        return sign * (y[0] * dy[0] + y[1] * dy[1])
    closest.direction = 1.0  # minimum of the field radius

    trace = integrate(y0, params, t_max, tol=tol, atol=atol, dt_sample=dt_sample,
                      extra_events=(leave, closest), backward=(branch == "stable"))
    leaves, minima = trace.meta["extra_events"]
    _, min_states = trace.meta["extra_states"]
    trace.meta["escape_time"] = float(abs(leaves[0])) if len(leaves) else None
    trace.meta["return_time"] = None
    trace.meta["return_radius"] = None
    if len(leaves):
        # first approach to the stationary point after leaving the dwell zone;
        # amplified round-off keeps it from re-entering an arbitrarily small ball
        for tt, yy in zip(minima, min_states):
            r = math.hypot(yy[0], yy[1])
            if abs(tt) > abs(leaves[0]) and r < dwell_radius:
                trace.meta["return_time"] = float(abs(tt))
                trace.meta["return_radius"] = r
                break
    if trace.meta["return_time"] is not None:
        keep = np.abs(trace.t) <= trace.meta["return_time"] + 1e-12
        trace.t, trace.y = trace.t[keep], trace.y[:, keep]
        trace.events = [e for e in trace.events if abs(e.t) <= trace.meta["return_time"]]
    trace.meta["epsilon"] = epsilon
    trace.meta["branch"] = branch
    return trace


def spiral_fit(trace: OrbitTrace, rho_max: float = 0.05, min_windings: float = 2.0):
    """Fit ``rho ~ exp(a t)`` and the winding rate on the north-pole spiral.

    Uses the longest contiguous run of samples with ``rho < rho_max`` and
    ``z > 0``.  Returns ``(radial_exponent, angular_frequency)``.
    """
    rho = trace.rho
    mask = (rho < rho_max) & (trace.z > 0) & (rho > 0)
    if not mask.any():
        raise InsufficientDataError("no samples near the north pole")
    # longest contiguous run
    idx = np.flatnonzero(mask)
    splits = np.flatnonzero(np.diff(idx) > 1) + 1
    runs = np.split(idx, splits)
    run = max(runs, key=len)
    if len(run) < 8:
        raise InsufficientDataError("spiral segment too short")
    t = trace.t[run]
    ang = np.unwrap(np.arctan2(trace.y[3, run], trace.y[2, run]))
    if abs(ang[-1] - ang[0]) < 2 * math.pi * min_windings:
        raise InsufficientDataError(
            f"spiral segment spans {abs(ang[-1] - ang[0]) / (2 * math.pi):.2f} windings")
    a = np.polyfit(t, np.log(rho[run]), 1)[0]
    w = np.polyfit(t, ang, 1)[0]
    return float(a), float(w)


# ---------------------------------------------------------------------------
# Poincare sections


def _line_root(f, a, b, n=2001):
    """First root of ``f`` on ``[a, b]`` scanning from ``a``.

    Roots hidden inside one grid cell next to an extremum (tori hugging the
    critical contour) are bracketed by refining the extremum first.
    """
    xs = np.linspace(a, b, n)
    vals = np.array([f(v) for v in xs])
    if vals[0] == 0:
        return float(xs[0])
    ch = np.flatnonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) <= 0)
    if len(ch):
        i = ch[0]
        return float(brentq(f, xs[i], xs[i + 1], xtol=1e-15, rtol=1e-15))
    sgn = np.sign(vals[0])
    i = int(np.argmin(sgn * vals))
    lo, hi = sorted((xs[max(i - 1, 0)], xs[min(i + 1, n - 1)]))
    ext = minimize_scalar(lambda v: sgn * f(v), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-14})
    if np.sign(f(ext.x)) == sgn:
        return None
    return float(brentq(f, lo if lo < ext.x else ext.x, ext.x, xtol=1e-15, rtol=1e-15)) \
        if lo < ext.x else float(ext.x)


def _section_state(params, m_value, u, energy=None, axis=0):
    phi = 0.5 - m_value
    xp, pp = (u, 0.0) if axis == 0 else (0.0, u)
    return transform_backward(TransformedState(xp, pp, m_value), phi)


def section_start(params: ModelParams, m_value: float, energy: float, side: int = -1):
    """Point on the ``phi' = 0`` plane with given ``M`` and energy.

    The ``p' = 0`` line is searched first, ``side`` picking the sign of
    ``x'``, then the ``x' = 0`` line.  Radii below 1e-3 are skipped since the
    field origin is the stationary point of the ``M = 1`` family.  Works for any
    ``delta`` since the full Hamiltonian is used.
    """
    r_min, r_max = domain_radii(m_value)
    lo = max(r_min, 1e-3)
    for axis in (0, 1):
        def f(u):
            return hamiltonian_full(_section_state(params, m_value, u, axis=axis), params) - energy

        for sgn in (side, -side):
            root = _line_root(f, sgn * lo, sgn * r_max, n=401)
            if root is not None:
                return _section_state(params, m_value, root, axis=axis)
    raise DomainError(f"energy {energy} not reachable on the section for M={m_value}")


def feasible_m_range(params: ModelParams, energy: float, m_lo=0.0, m_hi=3.0, n=301):
    """Interval of ``M`` for which ``energy`` is reachable on the section line."""
    ok = []
    for m in np.linspace(m_lo, m_hi, n):
        try:
            section_start(params, m, energy)
            ok.append(m)
        except DomainError:
            pass
    if not ok:
        raise DomainError("energy not reachable for any M")
    return min(ok), max(ok)


def section_targets(params: ModelParams, energy: float, count: int = 21,
                    seed: int | None = None, centre: float = 1.0):
    """``M`` targets for a section ensemble, symmetric around ``centre``.

    Deterministic equal spacing by default; with ``seed`` the targets other
    than ``centre`` are drawn uniformly from the same interval.
    """
    lo, hi = feasible_m_range(params, energy)
    w = 0.9 * min(centre - lo, hi - centre)
    if seed is None:
        return list(centre + np.linspace(-w, w, count))
    rng = np.random.default_rng(seed)
    draws = np.sort(rng.uniform(centre - w, centre + w, count - 1))
    return sorted([centre, *draws.tolist()])


def poincare_section(initials, params: ModelParams, t_end: float = 600.0,
                     tol: float = 1e-10) -> list[SectionCrossing]:
    """Integrate each initial state and collect its ``phi' = 0`` crossings.

    Orbit ids are the positions in ``initials``; each crossing carries the
    parent orbit's time-averaged ``M``.
    """
    out = []
    for k, st in enumerate(initials):
        tr = integrate(st, params, t_end, tol=tol, dt_sample=0.05, section=True, orbit_id=k)
        if not tr.crossings:
            log.warning("orbit %d never crossed the section", k)
        out.extend(tr.crossings)
    return out


def crossings_to_csv(crossings, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["orbit_id", "t", "xp", "pp", "dir", "M_avg"])
    for c in crossings:
        w.writerow([c.orbit_id, f"{c.t:.12g}", f"{c.xp:.12g}", f"{c.pp:.12g}",
                    c.direction, f"{c.m_avg:.12g}"])


# ---------------------------------------------------------------------------
# section morphology


def _tour(points: np.ndarray) -> np.ndarray:
    """Closed tour through the points: nearest-neighbour start, then 2-opt."""
    P = np.asarray(points, dtype=float)
    n = len(P)
    used = np.zeros(n, bool)
    i = int(np.argmin(P[:, 0]))
    order = [i]
    used[i] = True
    for _ in range(n - 1):
        d = np.hypot(*(P - P[i]).T)
        d[used] = np.inf
        i = int(np.argmin(d))
        order.append(i)
        used[i] = True
    P = P[order]
    for _ in range(100):
        improved = False
        for i in range(n - 2):
            a, b = P[i], P[i + 1]
            c, d = P[i + 2:], np.roll(P, -1, axis=0)[i + 2:]
            if i == 0:
                c, d = c[:-1], d[:-1]
            gain = (np.hypot(*(a - c).T) + np.hypot(*(b - d).T)
                    - np.hypot(*(a - b)) - np.hypot(*(c - d).T))
            k = int(np.argmin(gain))
            if gain[k] < -1e-14:
                k += i + 2
                P[i + 1:k + 1] = P[i + 1:k + 1][::-1].copy()
                improved = True
        if not improved:
            break
    return P


def _polyline_distance(points, curve) -> np.ndarray:
    a, ab = curve[:-1], np.diff(curve, axis=0)
    l2 = np.maximum((ab ** 2).sum(1), 1e-300)
    out = np.empty(len(points))
    for i, q in enumerate(points):
        t = np.clip(((q - a) * ab).sum(1) / l2, 0.0, 1.0)
        out[i] = np.hypot(*(a + t[:, None] * ab - q).T).min()
    return out


def closed_curve_residual(points, folds: int = 4, samples: int = 20001,
                          degree: int = 5) -> float:
    """Held-out distance of section points from a closed spline through the others.

    Points are joined into a closed tour; for each of ``folds`` interleaved
    subsets a periodic interpolating spline is fitted to the remaining points
    and the held-out points are measured against it.  Points on one smooth
    closed curve give a residual at the level of the sampling resolution, a
    scattered cloud gives its typical point spacing.  Section points are
    unevenly spread along the curve, so the default spline is quintic: it
    follows sparsely sampled tight bends better than a cubic.
    """
    P = _tour(points)
    if len(P) < 4 * folds:
        raise InsufficientDataError(f"{len(P)} points are too few for a curve fit")
    worst = 0.0
    idx = np.arange(len(P))
    for r in range(folds):
        keep = idx % folds != r
        tck, _ = splprep(P[keep].T, s=0, per=1, k=degree)
        curve = np.array(splev(np.linspace(0.0, 1.0, samples), tck)).T
        worst = max(worst, float(_polyline_distance(P[~keep], curve).max()))
    return worst


def box_area(points, h: float = 0.05) -> float:
    """Area covered by the ``h``-boxes of a square grid that hold at least one point."""
    cells = {tuple(c) for c in np.floor(np.asarray(points) / h).astype(np.int64)}
    return len(cells) * h * h


def section_morphology(crossings, launch_ids=None, h: float = 0.05) -> dict:
    """Per-orbit mean ``M``, crossing count and covered area of a section ensemble."""
    by_orbit: dict[int, list] = {}
    for c in crossings:
        by_orbit.setdefault(c.orbit_id, []).append(c)
    out = {}
    for k in sorted(by_orbit):
        pts = np.array([[c.xp, c.pp] for c in by_orbit[k]])
        out[str(k)] = {"m_avg": by_orbit[k][0].m_avg, "crossings": len(pts),
                       "box_area": box_area(pts, h)}
    return {"orbits": out, "box_size": h}


# ---------------------------------------------------------------------------
# periods and stationary point


def period(params: ModelParams, m_value: float, energy: float, tol: float = 1e-11) -> float:
    """Period of the reduced ``(x', p')`` motion on the torus ``(M, E)``."""
    if params.delta != 0:
        raise ContractError("period is defined for delta = 0")
    cv = critical_values(params)
    if (cv.ec_prime is not None and abs(m_value - 1) < 1e-12
            and abs(energy - cv.ec_prime) < 1e-12):
        raise DivergentPeriodError("the pinched torus has infinite period")
    lg, dw = params.lambda_gamma, params.detuning
    if lg == 0:
        if dw == 0:
            raise DivergentPeriodError("reduced motion is frozen for lambda = 0, tuned")
        return 2 * math.pi / abs(dw)
    # start where the contour crosses p' = 0
    r_min, r_max = domain_radii(m_value)
    f = lambda xp: float(reduced_energy(xp, 0.0, m_value, params)) - energy
    root = None
    for a, b in ((-r_max, -r_min), (r_min, r_max)):
        root = _line_root(f, a, b)
        if root is not None:
            break
    if root is None:
        raise DomainError(f"no torus with E={energy} at M={m_value}")
    # the reduced equations are singular where the orbit grazes the north
    # pole, so the motion is followed in the spin-Cartesian chart and p' = 0
    # is tracked as rho * p' = s2 x + s1 p
    y0 = transformed_to_cartesian(TransformedState(root, 0.0, m_value), 0.0)
    d0 = eom_cartesian(0.0, y0, params)
    direction = math.copysign(1.0, y0[3] * d0[0] + y0[2] * d0[1] + y0[0] * d0[3] + y0[1] * d0[2])

    def ret(t, y, *args):
        return y[3] * y[0] + y[2] * y[1]
    ret.direction = direction

    t_guess = 50.0
    for _ in range(12):
        sol = solve_ivp(eom_cartesian, (0, t_guess), y0, method="DOP853", rtol=tol,
                        atol=tol * 1e-2, events=ret, args=(params,))
        for tt, yy in zip(sol.t_events[0], sol.y_events[0]):
            xp = rotated_coordinates(yy)[0]
            if tt > 1e-9 and abs(xp - root) < 1e-6 * max(1.0, abs(root)):
                return float(tt)
        t_guess *= 2
    raise IntegrationError("no return to the starting point")


def _chart_energy(v, params):
    x, p, Q, P = v
    u = Q * Q + P * P
    k = math.sqrt(max((1 - u / 2) / 2, 0.0))
    d = params.delta
    return (params.omega * (x * x + p * p) / 2 + params.omega0 * (0.5 - u / 2)
            + SQRT2 * params.lambda_gamma * k * ((1 + d) * x * Q + (1 - d) * p * P))


def stationary_hessian(params: ModelParams, h: float = 1e-4) -> np.ndarray:
    """Finite-difference Hessian at the field origin / north pole.

    The chart is ``(x, p, Q, P)`` with ``Q + iP = sqrt(2(1/2 - z)) exp(-i phi)``,
    which is regular at the north pole.
    """
    H = np.zeros((4, 4))
    e = np.eye(4) * h
    f = lambda v: _chart_energy(v, params)
    z0 = np.zeros(4)
    for a in range(4):
        for b in range(4):
            H[a, b] = (f(z0 + e[a] + e[b]) - f(z0 + e[a] - e[b])
                       - f(z0 - e[a] + e[b]) + f(z0 - e[a] - e[b])) / (4 * h * h)
    return (H + H.T) / 2


def hessian_signature(params: ModelParams, h: float = 1e-4):
    """Numbers of positive and negative Hessian eigenvalues at the stationary point.

    Returns ``(n_plus, n_minus, degenerate)``; ``degenerate`` is True when an
    eigenvalue is smaller than 1e-8 in magnitude.
    """
    w = np.linalg.eigvalsh(stationary_hessian(params, h))
    return int((w > 0).sum()), int((w < 0).sum()), bool((np.abs(w) < 1e-8).any())


def linear_stability(params: ModelParams):
    """Eigenvalues of the linearized flow at the stationary point and its type.

    ``"focus-focus"`` for a complex quartet with non-zero real parts,
    ``"elliptic"`` for purely imaginary eigenvalues.
    """
    J = np.zeros((4, 4))
    # (x, p) and (P, Q) are canonical pairs in this chart
    J[0, 1], J[1, 0], J[2, 3], J[3, 2] = 1, -1, -1, 1
    lam = np.linalg.eigvals(J @ stationary_hessian(params))
    re = np.abs(lam.real).max()
    kind = "focus-focus" if re > 1e-6 and np.abs(lam.imag).min() > 1e-6 else (
        "elliptic" if re <= 1e-6 else "hyperbolic")
    return lam, kind
