"""
Quantum monodromy on the energy-momentum lattice
================================================

The joint spectrum (M, E_k) forms a lattice.  Carrying an elementary cell
once around the point (M, E) = (2j, omega0 j) does not bring it back to
itself: the cell comes back sheared.
"""
from dicke_monodromy import lattice as L
from dicke_monodromy import quantum as Q
from dicke_monodromy.params import ModelParams

for omega in (1.0, 2.0):
    p = ModelParams(omega=omega, omega0=1.0, lam=2.5, two_j=40)
    lat = L.em_lattice(Q.mblock_spectra(p, range(0, 61)))

    m_star, e_star = L.defect_locate(lat)
    print(f"omega = {omega}: defect near M = {m_star}, E = {e_star:.2f}")

    mono = L.transport_loop(lat, (40, 20.0))
    print("  loop around it :", mono.matrix.tolist(), f"(residual {mono.residual:.3f})")
    print("  loop elsewhere :", L.transport_loop(lat, (30, 0.0)).matrix.tolist())
    print("  reversed loop  :", L.transport_loop(lat, (40, 20.0), clockwise=True).matrix.tolist())

    # chains of fixed k bend smoothly below the defect and break above it
    rng = L.default_chain_range(lat)
    for ch in L.chains(lat, m_range=rng)[::6]:
        if not ch.truncated:
            print(f"  chain k={ch.k:2d}: {ch.classify():12s} spike ratio {ch.spike_ratio:8.1f}"
                  f" at M={ch.spike_column}")
