"""Quantum monodromy and excited-state transitions in the extended Dicke model.

Submodules
----------
quantum
    Sector bases, Hamiltonian matrices, spectra and expectation values.
classical
    Mean-field Hamiltonian, equations of motion, orbits, sections, periods.
lattice
    Energy-momentum and Peres lattices, cell transport, defect diagnostics.
spectral
    Level densities, transition signatures, spacing checks, disorder scores.
cli
    Command line driver writing CSV/JSON outputs with a manifest.
"""
__version__ = "0.1.0"

from .params import ModelParams  # noqa: E402
from . import errors  # noqa: E402

__all__ = ["ModelParams", "errors", "__version__"]
