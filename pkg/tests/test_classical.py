import math

import numpy as np
import pytest
from scipy.optimize import minimize

from dicke_monodromy import classical as C
from dicke_monodromy.errors import (ContractError, DivergentPeriodError, DomainError,
                                    InsufficientDataError, UndefinedError)
from dicke_monodromy.params import ModelParams

TUNED = ModelParams(1.0, 1.0, 2.5, 0.0, 40)
DETUNED = ModelParams(2.0, 1.0, 2.5, 0.0, 40)


def random_transformed(rng, m_value):
    r_min, r_max = C.domain_radii(m_value)
    r = rng.uniform(r_min, r_max)
    t = rng.uniform(0, 2 * np.pi)
    return C.TransformedState(r * math.cos(t), r * math.sin(t), m_value)


def extremum_over_disk(params, sign):
    """Independent optimization of the reduced energy over the M = 1 disk (polar)."""
    f = lambda v: sign * float(C.reduced_energy(v[0] * math.cos(v[1]),
                                                v[0] * math.sin(v[1]), 1.0, params))
    best = None
    for r0 in np.linspace(0.1, 1.3, 7):
        for t0 in np.linspace(0, 2 * np.pi, 8, endpoint=False):
            res = minimize(f, [r0, t0], method="L-BFGS-B",
                           bounds=[(0, math.sqrt(2)), (None, None)], options={"ftol": 1e-15, "gtol": 1e-12})
            if best is None or res.fun < best:
                best = res.fun
    return sign * best


class TestStates:
    def test_domain_radii(self):
        assert C.domain_radii(0.5) == (0.0, 1.0)
        lo, hi = C.domain_radii(1.5)
        assert lo == pytest.approx(1.0) and hi == pytest.approx(math.sqrt(3))
        with pytest.raises(DomainError):
            C.domain_radii(-0.1)

    def test_z_limits(self):
        assert C.z_of_radius(1.0, 0.0) == 0.5
        assert C.z_of_radius(1.0, math.sqrt(2)) == pytest.approx(-0.5)
        with pytest.raises(DomainError):
            C.PhaseState(0, 0, 0, 0.7)

    def test_round_trip(self, rng):
        for _ in range(20):
            s = C.PhaseState(*rng.normal(size=2), rng.uniform(0, 2 * np.pi), rng.uniform(-0.45, 0.45))
            back = C.transform_backward(C.transform_forward(s))
            assert back.x == pytest.approx(s.x, abs=1e-12)
            assert back.p == pytest.approx(s.p, abs=1e-12)
            assert back.z == pytest.approx(s.z, abs=1e-12)
            assert math.cos(back.phi - s.phi) == pytest.approx(1.0)

    def test_cartesian_round_trip(self):
        s = C.PhaseState(0.3, -0.2, 1.1, 0.1)
        t = C.PhaseState.from_cartesian(s.cartesian())
        assert (t.x, t.p, t.z) == pytest.approx((s.x, s.p, s.z))
        assert t.phi == pytest.approx(s.phi)

    def test_transformed_to_cartesian(self, rng):
        for _ in range(10):
            st = random_transformed(rng, 0.8)
            y = C.transformed_to_cartesian(st, 0.4)
            assert C.invariant_cartesian(y) == pytest.approx(0.8, abs=1e-12)
            xp, pp, _ = C.rotated_coordinates(y)
            assert (xp, pp) == pytest.approx((st.xp, st.pp), abs=1e-12)

    def test_outer_circle(self):
        st = C.TransformedState(math.sqrt(2), 0.0, 1.0)
        assert st.on_outer_circle


class TestHamiltonian:
    def test_ground_values(self):
        # empty field, spin at the south pole
        p = ModelParams(1.0, 1.0, 0.5, 0.0, 40)
        assert C.hamiltonian_full(C.PhaseState(0, 0, 0, -0.5), p) == -0.5
        assert C.invariant_m(C.PhaseState(0, 0, 0, -0.5)) == 0.0

    def test_chart_agreement(self, rng):
        for _ in range(20):
            d = rng.uniform(0, 1)
            p = ModelParams(rng.uniform(0.5, 2), rng.uniform(0.5, 2), rng.uniform(0, 3), d, 40)
            s = C.PhaseState(*rng.normal(size=2), rng.uniform(0, 2 * np.pi), rng.uniform(-0.5, 0.5))
            assert C.energy_cartesian(s.cartesian(), p) == pytest.approx(C.hamiltonian_full(s, p), abs=1e-12)

    def test_reduced_matches_full(self, rng):
        for params in (TUNED, DETUNED):
            for m in (0.4, 1.0, 1.7):
                st = random_transformed(rng, m)
                full = C.hamiltonian_full(C.transform_backward(st, 0.3), params)
                assert C.hamiltonian_transformed(st, params) == pytest.approx(full, abs=1e-12)

    def test_reduced_domain(self):
        with pytest.raises(DomainError):
            C.reduced_energy(2.0, 0.0, 1.0, TUNED)

    def test_reduced_vectorized(self):
        out = C.reduced_energy(np.array([0.0, 0.5]), np.array([0.0, 0.0]), 1.0, TUNED)
        assert out.shape == (2,)
        assert out[0] == pytest.approx(0.5)


class TestEquations:
    def test_charts_agree(self, rng):
        for _ in range(20):
            p = ModelParams(rng.uniform(0.5, 2), 1.0, rng.uniform(0, 3), rng.uniform(0, 1), 40)
            s = C.PhaseState(*rng.normal(size=2), rng.uniform(0, 2 * np.pi), rng.uniform(-0.45, 0.45))
            dy = C.eom(s, p)
            da = C.eom_angles(s, p)
            x, pp, s1, s2, s3 = s.cartesian()
            rho2 = s1 * s1 + s2 * s2
            np.testing.assert_allclose(dy[:2], da[:2], atol=1e-12)
            assert (s1 * dy[3] - s2 * dy[2]) / rho2 == pytest.approx(da[2], abs=1e-10)
            assert dy[4] == pytest.approx(da[3], abs=1e-12)

    def test_transformed_matches_spin(self, rng):
        for params in (TUNED, DETUNED):
            st = random_transformed(rng, 0.9)
            y = C.transformed_to_cartesian(st, 0.0)
            dy = C.eom_cartesian(0, y, params)
            h = 1e-7
            xp1, pp1, _ = C.rotated_coordinates(y + h * dy)
            xp0, pp0, _ = C.rotated_coordinates(y - h * dy)
            d = C.eom(st, params, "transformed")
            assert (xp1 - xp0) / (2 * h) == pytest.approx(d[0], rel=1e-6, abs=1e-6)
            assert (pp1 - pp0) / (2 * h) == pytest.approx(d[1], rel=1e-6, abs=1e-6)

    def test_transformed_requires_delta_zero(self):
        with pytest.raises(ContractError):
            C.eom_transformed(0, (0.1, 0.1), ModelParams(lam=1.0, delta=0.1), 0.8)

    def test_bad_chart(self):
        with pytest.raises(ContractError):
            C.eom(C.PhaseState(0, 0, 0, 0), TUNED, "polar")

    def test_stationary(self):
        dy = C.eom_cartesian(0, np.array([0, 0, 0, 0, 0.5]), TUNED)
        np.testing.assert_allclose(dy, 0, atol=1e-15)

    def test_photon_rate_stationary(self):
        st = C.TransformedState(0.3, 0.0, 0.5)
        assert C.photon_rate(st, (0.0, 0.0)) == 0.0


class TestIntegrate:
    def test_conservation(self):
        s = C.PhaseState(0.3, -0.4, 1.0, 0.1)
        for p in (TUNED, DETUNED):
            tr = C.integrate(s, p, 100.0, tol=1e-10)
            assert tr.energy_drift() < 1e-8
            assert tr.m_drift() < 1e-8
            assert tr.meta["spin_norm_error"] < 1e-9

    def test_decoupled_oscillator(self):
        p = ModelParams(1.0, 1.0, 0.0, 0.0, 40)
        tr = C.integrate(C.PhaseState(1.0, 0.0, 0.0, 0.0), p, 2 * math.pi, dt_sample=None)
        np.testing.assert_allclose(tr.y[:2, -1], [1.0, 0.0], atol=1e-9)

    def test_dicke_limit_breaks_m(self):
        p = ModelParams(1.0, 1.0, 2.5, 1.0, 40)
        tr = C.integrate(C.PhaseState(0.3, -0.4, 1.0, 0.1), p, 50.0, tol=1e-12)
        assert tr.energy_drift() < 1e-8
        assert tr.m_drift() > 1e-2

    def test_backward(self):
        s = C.PhaseState(0.3, -0.4, 1.0, 0.1)
        fw = C.integrate(s, TUNED, 5.0, tol=1e-12, dt_sample=None)
        bw = C.integrate(fw.y[:, -1], TUNED, 5.0, tol=1e-12, dt_sample=None, backward=True)
        np.testing.assert_allclose(bw.y[:, 0], s.cartesian(), atol=1e-8)

    def test_bad_tol(self):
        with pytest.raises(DomainError):
            C.integrate(C.PhaseState(0, 0, 0, 0), TUNED, 1.0, tol=0.0)


class TestCriticalValues:
    def test_tuned(self):
        cv = C.critical_values(TUNED)
        assert cv.lambda_c == 1.0
        assert cv.lambda_c_prime == 0.0
        assert cv.ec_prime == 0.5
        assert cv.e0 == pytest.approx(-1.6025)
        assert cv.e1_prime == pytest.approx(2.4245, abs=1e-4)

    def test_detuned(self):
        cv = C.critical_values(DETUNED)
        assert cv.lambda_c == pytest.approx(math.sqrt(2))
        assert cv.lambda_c_prime == 0.5
        assert cv.e0_prime == pytest.approx(-0.7994, abs=1e-4)

    def test_below_subspace_transition(self):
        cv = C.critical_values(ModelParams(2.0, 1.0, 0.3, 0.0, 40))
        assert cv.ec_prime is None
        assert cv.e0_prime == 0.5

    def test_normal_phase_ground(self):
        assert C.critical_values(ModelParams(1, 1, 0.5, 0, 40)).e0 == -0.5

    @pytest.mark.parametrize("params", [TUNED, DETUNED])
    def test_extrema_match_minimization(self, params):
        cv = C.critical_values(params)
        assert extremum_over_disk(params, 1.0) == pytest.approx(cv.e0_prime, abs=1e-6)
        assert extremum_over_disk(params, -1.0) == pytest.approx(cv.e1_prime, abs=1e-6)

    def test_temperature(self):
        assert C.critical_temperature(TUNED) == pytest.approx(0.5 / math.atanh(0.16))
        with pytest.raises(UndefinedError):
            C.critical_temperature(ModelParams(1, 1, 0.5, 0, 40))

    def test_temperature_grows_with_coupling(self):
        t = [C.critical_temperature(ModelParams(1, 1, lam, 0, 40)) for lam in (1.5, 2.5, 4.0)]
        assert t[0] < t[1] < t[2]


class TestStationaryPoint:
    def test_focus_focus(self):
        _, kind = C.linear_stability(TUNED)
        assert kind == "focus-focus"
        lam, _ = C.linear_stability(DETUNED)
        rate = math.sqrt(2.5 ** 2 - 0.25)
        assert np.abs(lam.real).max() == pytest.approx(rate, rel=1e-5)

    def test_elliptic_below(self):
        _, kind = C.linear_stability(ModelParams(2.0, 1.0, 0.3, 0.0, 40))
        assert kind == "elliptic"

    def test_signature(self):
        # indefinite for both stable and unstable equilibria
        assert C.hessian_signature(TUNED)[:2] == (2, 2)
        assert C.hessian_signature(ModelParams(2.0, 1.0, 0.3, 0.0, 40))[:2] == (2, 2)


@pytest.fixture(scope="module")
def tuned_trace():
    return C.pinched_orbit(TUNED, epsilon=1e-16)


class TestPinched:
    def test_conservation(self, tuned_trace):
        assert tuned_trace.meta["return_time"] is not None
        assert np.abs(tuned_trace.energy - 0.5).max() < 1e-8
        assert np.abs(tuned_trace.m_values - 1.0).max() < 1e-8

    def test_spiral(self, tuned_trace):
        a, w = C.spiral_fit(tuned_trace)
        assert a == pytest.approx(2.5, rel=0.02)
        assert w == pytest.approx(1.0, rel=0.02)

    def test_poles(self, tuned_trace):
        kinds = {e.kind for e in tuned_trace.events}
        assert {"north", "south"} <= kinds

    def test_detuned_north_only(self):
        tr = C.pinched_orbit(DETUNED)
        kinds = {e.kind for e in tr.events}
        assert "north" in kinds and "south" not in kinds

    def test_weak_coupling_spiral(self):
        tr = C.pinched_orbit(ModelParams(1, 1, 0.01, 0, 40), epsilon=1e-16)
        a, w = C.spiral_fit(tr)
        assert a == pytest.approx(0.01, rel=0.02)
        assert w == pytest.approx(1.0, rel=0.02)

    def test_no_unstable_point(self):
        with pytest.raises(DomainError):
            C.pinched_orbit(ModelParams(2.0, 1.0, 0.3, 0.0, 40))
        with pytest.raises(ContractError):
            C.pinched_orbit(ModelParams(1.0, 1.0, 2.5, 0.1, 40))

    def test_photon_rate_peak(self, tuned_trace):
        xp, pp, _ = C.rotated_coordinates(tuned_trace.y)
        inside = np.abs(C.z_of_radius(1.0, np.hypot(xp, pp))) < 0.5 - 1e-9
        rates = np.array([C.eom_transformed(0, (a, b), TUNED, 1.0)[1]
                          for a, b in zip(xp[inside], pp[inside])])
        k = int(np.argmax(np.abs(rates)))
        assert abs(pp[inside][k]) == pytest.approx(1.0, abs=0.01)

    def test_spiral_needs_data(self):
        tr = C.integrate(C.PhaseState(0.1, 0.1, 0.0, -0.4), TUNED, 1.0)
        with pytest.raises(InsufficientDataError):
            C.spiral_fit(tr)


class TestPeriod:
    def test_uncoupled(self):
        p = ModelParams(2.0, 1.0, 0.0, 0.0, 40)
        assert C.period(p, 0.8, 0.3) == pytest.approx(2 * math.pi)
        with pytest.raises(DivergentPeriodError):
            C.period(ModelParams(1.0, 1.0, 0.0, 0.0, 40), 0.8, 0.3)

    def test_diverges_at_pinched(self):
        with pytest.raises(DivergentPeriodError):
            C.period(TUNED, 1.0, 0.5)
        taus = [C.period(TUNED, 1.0, 0.5 + d) for d in (1e-2, 1e-4, 1e-6)]
        assert taus[0] < taus[1] < taus[2]
        # tau ~ -ln(E - Ec) / rate with the instability rate 2.5
        slope = (taus[2] - taus[1]) / math.log(100)
        assert slope == pytest.approx(1 / 2.5, rel=0.05)

    def test_requires_delta_zero(self):
        with pytest.raises(ContractError):
            C.period(ModelParams(1, 1, 2.5, 0.2, 40), 0.8, 0.3)


class TestSection:
    def test_targets(self):
        t = C.section_targets(TUNED, 0.5, count=5)
        assert len(t) == 5 and t[2] == pytest.approx(1.0)
        s = C.section_targets(TUNED, 0.5, count=5, seed=3)
        assert 1.0 in s and s == sorted(s)
        assert s == C.section_targets(TUNED, 0.5, count=5, seed=3)

    def test_start_on_shell(self):
        for m in (0.7, 1.0, 1.2):
            st = C.section_start(TUNED, m, 0.5)
            assert C.hamiltonian_full(st, TUNED) == pytest.approx(0.5, abs=1e-9)
            assert C.invariant_m(st) == pytest.approx(m, abs=1e-12)

    def test_unreachable(self):
        with pytest.raises(DomainError):
            C.section_start(TUNED, 0.2, 5.0)

    def test_crossings_on_curve(self):
        st = C.section_start(TUNED, 0.6, 0.5)
        cr = C.poincare_section([st], TUNED, t_end=600)
        assert len(cr) > 50
        for c in cr[:20]:
            assert float(C.reduced_energy(c.xp, c.pp, 0.6, TUNED)) == pytest.approx(0.5, abs=1e-8)
        pts = np.array([[c.xp, c.pp] for c in cr])
        assert C.closed_curve_residual(pts) < 1e-4

    def test_residual_scatter(self, rng):
        pts = rng.uniform(-1, 1, size=(200, 2))
        assert C.closed_curve_residual(pts) > 1e-2

    def test_residual_circle(self, rng):
        t = rng.uniform(0, 2 * np.pi, 300)
        pts = np.c_[np.cos(t), 0.5 * np.sin(t)]
        assert C.closed_curve_residual(pts) < 1e-4
        with pytest.raises(InsufficientDataError):
            C.closed_curve_residual(pts[:10])

    def test_box_area(self):
        pts = np.array([[0.01, 0.01], [0.02, 0.02], [0.3, 0.3]])
        assert C.box_area(pts, h=0.05) == pytest.approx(2 * 0.0025)

    def test_morphology(self):
        cr = [C.SectionCrossing(0.0, 0.01, 0.01, 1, 0, 0.9),
              C.SectionCrossing(1.0, 0.3, 0.3, 1, 0, 0.9),
              C.SectionCrossing(2.0, 0.3, 0.3, 1, 1, 1.1)]
        m = C.section_morphology(cr)
        assert m["orbits"]["0"]["crossings"] == 2
        assert m["orbits"]["1"]["box_area"] == pytest.approx(0.0025)


def test_detuning_reflection(rng):
    p = ModelParams(2.0, 1.0, 2.5, 0.0, 40)
    q = ModelParams(1.0, 2.0, 2.5, 0.0, 40)
    for _ in range(20):
        st = random_transformed(rng, rng.uniform(0.2, 2.0))
        lhs = C.reduced_energy(st.xp, st.pp, st.m_value, q)
        rhs = -C.reduced_energy(-st.xp, -st.pp, st.m_value, p) + 3.0 * (st.m_value - 0.5)
        assert lhs == pytest.approx(rhs, abs=1e-12)
