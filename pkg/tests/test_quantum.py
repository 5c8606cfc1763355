import math

import numpy as np
import pytest

from dicke_monodromy import quantum as Q
from dicke_monodromy.errors import ContractError, DomainError
from dicke_monodromy.params import ModelParams


def half_spin(lam=0.8, delta=0.0):
    return ModelParams(1.0, 1.0, lam, delta, 1, 1)


class TestParams:
    def test_derived(self):
        p = ModelParams(1.0, 1.0, 2.0, 0.0, 10, 40)
        assert p.j == 5
        assert p.gamma == 0.25
        assert p.lambda_gamma == pytest.approx(1.0)
        assert p.hbar == pytest.approx(0.1)
        assert ModelParams(2.0, 1.0).detuning == 1.0

    @pytest.mark.parametrize("kw", [
        dict(omega=0.0), dict(omega0=-1.0), dict(lam=-0.1), dict(delta=1.5),
        dict(two_j=0), dict(two_j=10, atoms_n=5), dict(two_j=10, atoms_n=13),
    ])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            ModelParams(**kw)


class TestBasis:
    def test_half_spin_block(self):
        b = Q.build_basis(half_spin(), Q.MBlock(1))
        assert sorted(b) == sorted([Q.BasisState(1, -1), Q.BasisState(0, 1)])
        assert len(b) == 2

    def test_dimensions(self):
        p = ModelParams(two_j=40)
        assert len(Q.build_basis(p, Q.MBlock(5))) == 6
        assert len(Q.build_basis(p, Q.MBlock(45))) == 41
        assert Q.build_basis(p, Q.MBlock(0)) == [Q.BasisState(0, -40)]

    def test_dimension_formula(self):
        p = ModelParams(two_j=12)
        for M in range(0, 19):
            b = Q.build_basis(p, Q.MBlock(M))
            assert len(b) == Q.mblock_dimension(12, M) == min(M, 12) + 1
            assert all(s.excitation(12) == M for s in b)

    def test_parity_block(self):
        p = ModelParams(two_j=4, delta=0.3, lam=1.0)
        b = Q.build_basis(p, Q.ParityBlock(-1, 6))
        assert all((-1) ** s.excitation(4) == -1 for s in b)
        assert all(s.n <= 6 for s in b)
        assert len(set(b)) == len(b)

    def test_empty(self):
        with pytest.raises(DomainError):
            Q.build_basis(ModelParams(), Q.MBlock(-1))

    def test_deterministic_order(self):
        p = ModelParams(two_j=6)
        assert Q.build_basis(p, Q.ParityBlock(1, 5)) == Q.build_basis(p, Q.ParityBlock(1, 5))


class TestHamiltonian:
    def test_two_by_two(self):
        p = half_spin()
        b = [Q.BasisState(1, -1), Q.BasisState(0, 1)]
        H = Q.hamiltonian_matrix(p, b)
        np.testing.assert_allclose(H, [[0.5, 0.8], [0.8, 0.5]], atol=1e-15)
        w, _ = Q.diagonalize(H)
        np.testing.assert_allclose(w, [-0.3, 1.3], atol=1e-14)

    def test_decoupled(self):
        p = ModelParams(1.3, 0.7, 0.0, 0.0, 6)
        b = Q.build_basis(p, Q.MBlock(4))
        H = Q.hamiltonian_matrix(p, b)
        assert np.count_nonzero(H - np.diag(np.diag(H))) == 0
        expect = sorted(1.3 * s.n + 0.7 * s.m for s in b)
        np.testing.assert_allclose(np.sort(np.diag(H)), expect)

    def test_exactly_symmetric(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.4, 8)
        H = Q.hamiltonian_matrix(p, Q.build_basis(p, Q.ParityBlock(1, 10)))
        assert np.array_equal(H, H.T)

    def test_no_cross_m_elements(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.0, 6)
        b = Q.build_basis(p, Q.ParityBlock(1, 8))
        H = Q.hamiltonian_matrix(p, b)
        M = np.array([s.excitation(6) for s in b])
        assert np.all(H[M[:, None] != M[None, :]] == 0)

    def test_counter_rotating_element(self):
        p = ModelParams(1.0, 1.0, 1.0, 0.5, 2, 4)
        b = [Q.BasisState(0, -2), Q.BasisState(1, 0)]
        H = Q.hamiltonian_matrix(p, b)
        # (delta lam / sqrt N) sqrt(1) sqrt(j(j+1) - m(m+1)) with j=1, m=-1
        assert H[0, 1] == pytest.approx(0.5 / 2 * math.sqrt(2))

    def test_bad_state(self):
        with pytest.raises(DomainError):
            Q.hamiltonian_matrix(ModelParams(two_j=2), [Q.BasisState(0, 4)])


class TestDiagonalize:
    def test_identity(self):
        w, v = Q.diagonalize(np.eye(4))
        np.testing.assert_allclose(w, 1.0)

    def test_random_residual(self, rng):
        A = rng.normal(size=(50, 50))
        H = A + A.T
        w, v = Q.diagonalize(H)
        assert np.all(np.diff(w) >= 0)
        res = np.linalg.norm(H @ v - v * w, axis=0).max()
        assert res <= 1e-9 * np.linalg.norm(H, 2)
        np.testing.assert_allclose(v.T @ v, np.eye(50), atol=1e-10)
        idx = np.argmax(np.abs(v), axis=0)
        assert np.all(v[idx, np.arange(50)] > 0)

    def test_non_symmetric(self):
        with pytest.raises(ContractError):
            Q.diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]))


class TestSpectra:
    def test_expectations_decoupled(self):
        p = ModelParams(1.3, 1.0, 0.0, 0.0, 6)
        sp = Q.solve_sector(p, Q.MBlock(4))
        for k in range(len(sp)):
            i = int(np.argmax(np.abs(sp.eigenvectors[:, k])))
            assert sp.expectation("n")[k] == pytest.approx(sp.basis[i].n)
            assert sp.expectation("J3")[k] == pytest.approx(sp.basis[i].m)

    def test_two_level_ground_state(self):
        sp = Q.solve_sector(half_spin(), Q.MBlock(1))
        assert sp.expectation("n")[0] == pytest.approx(0.5)

    def test_conserved_m(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.0, 10)
        sp = Q.solve_sector(p, Q.MBlock(13))
        np.testing.assert_allclose(sp.expectation("M"), 13, atol=1e-10)
        np.testing.assert_allclose(sp.eigenvectors.T @ sp.eigenvectors, np.eye(len(sp)), atol=1e-10)

    def test_parity_expectation(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.3, 6)
        sp = Q.solve_sector(p, Q.ParityBlock(-1, 12))
        np.testing.assert_allclose(sp.expectation("parity"), -1, atol=1e-10)

    def test_sum_rule(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.3, 6)
        sp = Q.solve_sector(p, Q.ParityBlock(1, 12))
        lhs = sp.expectation("n") + sp.expectation("J3") + p.j
        np.testing.assert_allclose(lhs, sp.expectation("M"), atol=1e-10)

    def test_mblock_rejects_delta(self):
        with pytest.raises(DomainError):
            Q.solve_sector(ModelParams(delta=0.1, lam=1.0, two_j=4), Q.MBlock(3))

    def test_parity_matches_mblocks(self):
        p = ModelParams(1.0, 1.0, 1.5, 0.0, 6)
        par = Q.sector_levels(p, Q.ParityBlock(1, 60))
        blocks = np.sort(np.concatenate([Q.sector_levels(p, Q.MBlock(M))
                                         for M in range(0, 47, 2)]))
        ceiling = 10.0
        np.testing.assert_allclose(par[par < ceiling], blocks[blocks < ceiling], atol=1e-9)

    def test_energy_ceiling(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.2, 8)
        full = Q.solve_sector(p, Q.ParityBlock(1, 40))
        cut = Q.solve_sector(p, Q.ParityBlock(1, 40), energy_ceiling=0.0)
        np.testing.assert_allclose(cut.energies, full.energies[full.energies < 0.0], atol=1e-9)


class TestOverlap:
    def test_decoupled(self):
        p = ModelParams(1.3, 1.0, 0.0, 0.0, 6)
        sp = Q.solve_sector(p, Q.MBlock(4))
        ov = Q.localization_overlap(sp, Q.BasisState(0, 2))
        assert sorted(ov)[-1] == pytest.approx(1.0)
        assert sorted(ov)[-2] == pytest.approx(0.0)

    def test_completeness(self):
        p = ModelParams(1.0, 1.0, 2.5, 0.0, 40)
        sp = Q.solve_sector(p, Q.MBlock(40))
        ov = Q.localization_overlap(sp, Q.BasisState(0, 40))
        assert ov.sum() == pytest.approx(1.0, abs=1e-10)
        k = int(np.argmax(ov))
        nearest = int(np.argmin(np.abs(sp.energies - 20.0)))
        assert k == nearest

    def test_outside(self):
        sp = Q.solve_sector(ModelParams(two_j=4), Q.MBlock(2))
        with pytest.raises(DomainError):
            Q.localization_overlap(sp, Q.BasisState(5, 0))


class TestGroundState:
    def test_converges_to_classical(self):
        target = -1.6025
        errs = []
        for tj in (10, 20, 40, 80):
            p = ModelParams(1.0, 1.0, 2.5, 0.0, tj)
            e = Q.ground_state_energy(p) / tj
            errs.append(abs(e - target))
            assert e < target + 1e-12  # quantum ground lies below the classical minimum
        assert all(np.diff(errs) < 0)


class TestCutoff:
    def test_decoupled(self):
        p = ModelParams(1.0, 1.0, 0.0, 0.5, 4)
        n = Q.converge_cutoff(p, 6.0, tol=1e-10)
        assert n >= math.ceil((6.0 + 2.0) / 1.0) or n >= 8

    def test_reports(self, caplog):
        p = ModelParams(1.0, 1.0, 2.5, 0.2, 10)
        with caplog.at_level("INFO"):
            n = Q.converge_cutoff(p, 0.0, tol=1e-8)
        assert n >= 8
        assert any("cutoff" in r.message for r in caplog.records)
