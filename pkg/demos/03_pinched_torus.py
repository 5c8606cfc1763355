"""
The pinched torus
=================

At (M, E) = (1, omega0/2) the classical motion has an unstable stationary
point, the north pole with an empty field.  An orbit started next to it
spirals out, makes one excursion and spirals back in.
"""
import numpy as np

from dicke_monodromy import classical as C
from dicke_monodromy.params import ModelParams

p = ModelParams(omega=1.0, omega0=1.0, lam=2.5, two_j=40)
print(C.critical_values(p).as_dict())
print("stationary point:", C.linear_stability(p)[1],
      " Hessian signature:", C.hessian_signature(p)[:2])

tr = C.pinched_orbit(p, epsilon=1e-16)
print("return after t =", tr.meta["return_time"])
print("energy drift", tr.energy_drift(), " M drift", tr.m_drift())
print("pole passages:", [(e.kind, round(e.t, 2)) for e in tr.events if e.kind != "equator"])

a, w = C.spiral_fit(tr)
print(f"spiral: radius ~ exp({a:.4f} t), winding rate {w:.4f}")

# detuned: the orbit no longer reaches the south pole
pd = p.with_(omega=2.0)
kinds = {e.kind for e in C.pinched_orbit(pd).events}
print("detuned pole passages:", sorted(kinds - {"equator"}))

# photon emission rate along the tuned orbit
xp, pp, _ = C.rotated_coordinates(tr.y)
inside = np.abs(C.z_of_radius(1.0, np.hypot(xp, pp))) < 0.5 - 1e-9
dpp = np.array([C.eom_transformed(0, (a_, b_), p, 1.0)[1] for a_, b_ in zip(xp[inside], pp[inside])])
k = np.argmax(np.abs(dpp))
print(f"largest |dp'/dt| = {abs(dpp[k]):.4f} at p' = {pp[inside][k]:.4f}")

# periods grow logarithmically towards the pinched torus
for d in (1e-2, 1e-4, 1e-6):
    print(f"E = 0.5 + {d:g}: period {C.period(p, 1.0, 0.5 + d):.3f}")
