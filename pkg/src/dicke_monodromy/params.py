"""Model parameters of the extended Dicke Hamiltonian."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace, asdict

from .errors import DomainError


@dataclass(frozen=True)
class ModelParams:
    """Physical constants of the atom-field model.

    Parameters
    ----------
    omega : float
        Single-boson energy.
    omega0 : float
        Level splitting of one atom.
    lam : float
        Atom-field coupling strength (``lambda`` in the usual notation).
    delta : float
        Weight of the counter-rotating terms, 0 (Tavis-Cummings) to 1 (Dicke).
    two_j : int
        Twice the quasispin ``j``; the number of active atoms ``N* = 2j``.
    atoms_n : int
        Total number of atoms ``N``.  Defaults to ``two_j`` (``gamma = 1``).
    """

    omega: float = 1.0
    omega0: float = 1.0
    lam: float = 0.0
    delta: float = 0.0
    two_j: int = 40
    atoms_n: int | None = None

    def __post_init__(self):
        if self.atoms_n is None:
            object.__setattr__(self, "atoms_n", self.two_j)
        if not (self.omega > 0 and self.omega0 > 0):
            raise DomainError("omega and omega0 must be positive")
        if not self.lam >= 0:
            raise DomainError("lambda must be non-negative")
        if not 0.0 <= self.delta <= 1.0:
            raise DomainError("delta must lie in [0, 1]")
        if int(self.two_j) != self.two_j or int(self.atoms_n) != self.atoms_n:
            raise DomainError("two_j and atoms_n must be integers")
        object.__setattr__(self, "two_j", int(self.two_j))
        object.__setattr__(self, "atoms_n", int(self.atoms_n))
        if not 1 <= self.two_j <= self.atoms_n:
            raise DomainError("need 1 <= two_j <= atoms_n")
        if (self.atoms_n - self.two_j) % 2:
            raise DomainError("two_j and atoms_n must have equal parity")

    @classmethod
    def from_scaled(cls, omega=1.0, omega0=1.0, lambda_gamma=0.0, delta=0.0, two_j=40):
        """Parameters with ``gamma = 1`` so that ``lam == lambda_gamma``."""
        return cls(omega, omega0, lambda_gamma, delta, two_j, two_j)

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)

    @property
    def j(self) -> float:
        return self.two_j / 2

    @property
    def gamma(self) -> float:
        return self.two_j / self.atoms_n

    @property
    def lambda_gamma(self) -> float:
        """Rescaled coupling ``sqrt(gamma) * lambda`` of the classical limit."""
        return math.sqrt(self.gamma) * self.lam

    @property
    def detuning(self) -> float:
        """``omega - omega0``."""
        return self.omega - self.omega0

    @property
    def hbar(self) -> float:
        """Effective Planck constant ``1 / (2j)``."""
        return 1.0 / self.two_j
