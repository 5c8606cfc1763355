"""
Poincare sections and the breakdown of the lattice
==================================================

With delta = 0 every orbit stays on a torus and its section points trace a
closed curve.  Switching on delta mixes the M blocks: section clouds spread
and the quantum lattice loses its local order.
"""
import numpy as np

from dicke_monodromy import classical as C
from dicke_monodromy import lattice as L
from dicke_monodromy import quantum as Q
from dicke_monodromy import spectral as S
from dicke_monodromy.params import ModelParams

p0 = ModelParams(omega=1.0, omega0=1.0, lam=2.5, two_j=40)

for m in (0.6, 1.3):
    cr = C.poincare_section([C.section_start(p0, m, 0.5)], p0, t_end=3000)
    pts = np.array([[c.xp, c.pp] for c in cr])
    print(f"delta = 0, M = {m}: {len(pts)} crossings, curve residual"
          f" {C.closed_curve_residual(pts):.1e}")

for d in (0.05, 0.2):
    p = p0.with_(delta=d)
    cr = C.poincare_section([C.section_start(p, 1.0, 0.5)], p, t_end=600)
    pts = np.array([[c.xp, c.pp] for c in cr])
    print(f"delta = {d}: orbit from M = 1 covers {C.box_area(pts):.3f}"
          f" (mean M {cr[0].m_avg:.3f})")

lattices = {}
for d in (0.0, 0.05, 0.2, 0.4):
    p = p0.with_(delta=d)
    lattices[d] = L.binned_lattice([Q.solve_sector(p, Q.ParityBlock(s, 80, 80)) for s in (1, -1)])
for d, rep in S.breakdown_metric(lattices, params=p0).items():
    print(f"delta = {d:4.2f}: disorder {rep.score:.3f} ({rep.misfits}/{rep.interior})")
