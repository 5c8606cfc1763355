"""
Spectrum of the extended Dicke model
====================================

Diagonalize the Hamiltonian block by block and compare the lowest level
with the classical ground-state energy.
"""
import numpy as np

from dicke_monodromy import classical as C
from dicke_monodromy import quantum as Q
from dicke_monodromy.params import ModelParams

# resonant case, well inside the superradiant phase
p = ModelParams(omega=1.0, omega0=1.0, lam=2.5, delta=0.0, two_j=40)
print("lambda_gamma =", p.lambda_gamma, " hbar =", p.hbar)

# for delta = 0 the excitation number M is conserved: one block per M
sp = Q.solve_sector(p, Q.MBlock(40))
print("M = 40 block:", len(sp), "levels from", sp.energies[0], "to", sp.energies[-1])

# every eigenstate obeys <n> + <J3> + j = M
print("sum rule error:", np.abs(sp.expectation("n") + sp.expectation("J3") + p.j - 40).max())

# ground energy per atom against the mean-field value
cv = C.critical_values(p)
for two_j in (10, 20, 40, 80):
    e = Q.ground_state_energy(ModelParams(1.0, 1.0, 2.5, 0.0, two_j)) / two_j
    print(f"2j = {two_j:3d}: E0/2j = {e:.5f}   classical {cv.e0:.5f}")

# with delta > 0 only the parity survives; the boson cutoff is converged explicitly
pd = p.with_(delta=0.2, two_j=20)
n_max = Q.converge_cutoff(pd, 30.0, tol=1e-8)
levels = Q.sector_levels(pd, Q.ParityBlock(1, n_max), energy_ceiling=30.0)
print("delta = 0.2, parity +1: n_max =", n_max, ",", len(levels), "levels below E = 30")
