import io
import math

import numpy as np
import pytest

from dicke_monodromy import quantum as Q
from dicke_monodromy import spectral as S
from dicke_monodromy.errors import DomainError, NotFoundError
from dicke_monodromy.lattice import Lattice
from dicke_monodromy.params import ModelParams


def grid_lattice(n_cols=12, n_rows=30, slope=0.3, noise=0.0, rng=None):
    cols, absc = {}, {}
    for c in range(n_cols):
        e = np.arange(n_rows) + slope * c
        if noise:
            e = np.sort(e + rng.normal(scale=noise, size=n_rows))
        cols[c] = e
        absc[c] = np.full(n_rows, float(c))
    return Lattice(cols, absc)


class TestDensity:
    def test_normalized(self, rng):
        lv = rng.uniform(0, 10, 200)
        c = S.smoothed_density(lv)
        assert c.integral() == pytest.approx(200, rel=1e-6)
        assert c.count == 200
        assert c.sigma == pytest.approx(2.5 * S.mean_spacing(lv))

    def test_single_level(self):
        c = S.smoothed_density([1.0], sigma=0.5)
        e, h = c.peak()
        assert e == pytest.approx(1.0, abs=c.step)
        assert h == pytest.approx(1 / (0.5 * math.sqrt(2 * math.pi)), rel=1e-4)

    def test_order_independent(self, rng):
        lv = rng.normal(size=500) * 1e3
        a = S.smoothed_density(lv, sigma=30.0)
        b = S.smoothed_density(lv[::-1], sigma=30.0, grid=a.energies)
        assert np.array_equal(a.rho, b.rho)

    def test_errors(self):
        with pytest.raises(DomainError):
            S.smoothed_density([])
        with pytest.raises(DomainError):
            S.smoothed_density([1.0, 2.0], sigma=0.0)
        with pytest.raises(DomainError):
            S.mean_spacing([1.0])

    def test_csv(self):
        c = S.smoothed_density([0.0, 1.0], sigma=0.5, points=11)
        buf = io.StringIO()
        c.to_csv(buf)
        assert buf.getvalue().splitlines()[0] == "E,rho"
        assert len(buf.getvalue().splitlines()) == 12


class TestEsqptSignatures:
    def test_log_fit_synthetic(self):
        # logarithmic peak at E = 0.1, capped at the kernel scale
        E = np.linspace(-1, 1, 2001)
        rho = 2.0 - 0.3 * np.log(np.hypot(E - 0.1, 0.02))
        fit = S.esqpt_fit(S.DensityCurve(E, rho, 0.02, 0))
        assert fit.e_c == pytest.approx(0.1, abs=0.01)
        assert fit.coefficient == pytest.approx(0.3, rel=0.1)

    def test_log_fit_rejects_flat(self, rng):
        c = S.smoothed_density(np.linspace(0, 10, 400), sigma=0.2,
                               grid=np.linspace(1, 9, 801))
        with pytest.raises(NotFoundError):
            S.esqpt_fit(c)

    def test_jump_synthetic(self):
        # density slope drops from +1 to 0 at E = 2
        E = np.linspace(0, 4, 4001)
        rho = np.where(E < 2, E, 2.0)
        from scipy.ndimage import gaussian_filter1d
        sigma = 0.1
        c = S.DensityCurve(E, gaussian_filter1d(rho, sigma / (E[1] - E[0]), mode="nearest"),
                           sigma, 0)
        e_j, jump = S.derivative_jump(c, (0.5, 3.5))
        assert e_j == pytest.approx(2.0, abs=0.01)
        assert jump == pytest.approx(-1.0, abs=0.05)
        assert S.jump_significance(c, e_j, jump) > 10

    def test_jump_window(self):
        c = S.smoothed_density(np.linspace(0, 10, 50), sigma=0.5)
        with pytest.raises(DomainError):
            S.derivative_jump(c, (100, 200))

    @pytest.mark.parametrize("two_j", [40, 80, 160])
    def test_block_peak(self, two_j):
        p = ModelParams(1.0, 1.0, 2.5, 0.0, two_j)
        c = S.smoothed_density(Q.sector_levels(p, Q.MBlock(two_j)))
        assert abs(c.peak()[0] - p.omega0 * p.j) < c.sigma

    def test_peak_grows(self):
        h = [S.smoothed_density(Q.sector_levels(ModelParams(two_j=tj, lam=2.5),
                                                Q.MBlock(tj))).peak()[1] for tj in (40, 80, 160)]
        assert h[0] < h[1] < h[2]


class TestStacked:
    def test_complete_below_top(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.0, 10)
        lv = S.stacked_levels(p, 8.0)
        brute = np.concatenate([Q.sector_levels(p, Q.MBlock(M)) for M in range(0, 400)])
        np.testing.assert_allclose(lv, np.sort(brute[brute <= 8.0]), atol=1e-9)

    def test_rejects_delta(self):
        with pytest.raises(DomainError):
            S.stacked_levels(ModelParams(lam=1.0, delta=0.1, two_j=4), 1.0)

    def test_m_limit(self):
        with pytest.raises(DomainError):
            S.stacked_levels(ModelParams(two_j=10, lam=2.5), 50.0, m_limit=5)

    def test_jump_at_critical_energy(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.0, 40)
        c, lv = S.stacked_density(p)
        e_j, jump = S.derivative_jump(c, (10.0, 30.0))
        assert jump < 0
        assert abs(e_j - 20.0) < c.sigma
        assert S.jump_significance(c, e_j, jump) > 1


class TestSpacing:
    @pytest.mark.parametrize("scaled", [-0.2645, 0.25, 0.7645])
    def test_bohr_sommerfeld(self, scaled):
        p = ModelParams(1.0, 1.0, 2.5, 0.0, 80)
        lv = Q.sector_levels(p, Q.MBlock(60))
        assert S.spacing_check(lv, scaled * 80, p, 0.75) == pytest.approx(1.0, abs=0.05)

    def test_outside(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.0, 20)
        lv = Q.sector_levels(p, Q.MBlock(10))
        with pytest.raises(DomainError):
            S.spacing_check(lv, 1e3, p, 0.5)


class TestDisorder:
    def test_regular_zero(self):
        rep = S.disorder_score(grid_lattice())
        assert rep.score == 0.0 and rep.interior > 0 and rep.nonconvex == 0

    def test_noise_increases(self, rng):
        scores = [S.disorder_score(grid_lattice(noise=s, rng=np.random.default_rng(5))).score
                  for s in (0.0, 0.05, 0.2, 0.5)]
        assert all(np.diff(scores) > 0)

    def test_window(self):
        rep = S.disorder_score(grid_lattice(), columns=(3, 5), energy_window=(5, 10))
        assert 0 < rep.interior < S.disorder_score(grid_lattice()).interior

    def test_default_window(self):
        cols, win = S.default_window(ModelParams(two_j=40))
        assert cols == (2, 60)
        assert win == (-80.0, 40.0)

    def test_metric_sorted(self):
        out = S.breakdown_metric({0.2: grid_lattice(), 0.0: grid_lattice()})
        assert list(out) == [0.0, 0.2]
