"""
Level density at the critical energy
====================================

The M = 2j block has a density peak at E = omega0 j that sharpens with j.
Stacking all blocks instead turns the peak into a drop of the slope.
"""
from dicke_monodromy import quantum as Q
from dicke_monodromy import spectral as S
from dicke_monodromy.params import ModelParams

for two_j in (40, 80, 160):
    p = ModelParams(omega=1.0, omega0=1.0, lam=2.5, two_j=two_j)
    c = S.smoothed_density(Q.sector_levels(p, Q.MBlock(two_j)))
    e, h = c.peak()
    print(f"j = {two_j // 2:3d}: peak at E = {e:7.2f} (omega0 j = {p.j:5.1f}), height {h:.3f},"
          f" sigma {c.sigma:.2f}")

p = ModelParams(omega=1.0, omega0=1.0, lam=2.5, two_j=40)
curve, levels = S.stacked_density(p)
e_j, jump = S.derivative_jump(curve, (10.0, 30.0))
print(f"stacked: {len(levels)} levels, slope drops by {-jump:.3f} at E = {e_j:.2f}"
      f" (kernel {curve.sigma:.2f}, significance {S.jump_significance(curve, e_j, jump):.1f})")

# level spacing against the classical period at M = 0.75 (per atom)
p = ModelParams(omega=1.0, omega0=1.0, lam=2.5, two_j=80)
lv = Q.sector_levels(p, Q.MBlock(60))
for e in (-0.2645, 0.25, 0.7645):
    print(f"E/2j = {e:+.3f}: dE tau / 2 pi hbar = {S.spacing_check(lv, e * 80, p, 0.75):.4f}")
