"""Exception types shared across the package."""


class DickeError(Exception):
    """Base class for all library errors."""


class DomainError(DickeError, ValueError):
    """Input lies outside the domain where an operation is defined."""


class ContractError(DickeError, ValueError):
    """A caller violated an operation's precondition (e.g. non-symmetric matrix)."""


class ResourceError(DickeError, RuntimeError):
    """A computation did not converge within its resource limits."""


class IntegrationError(DickeError, RuntimeError):
    """Orbit integration failed."""


class InsufficientDataError(DickeError, ValueError):
    """Not enough samples to perform a fit."""


class DivergentPeriodError(DickeError, ValueError):
    """Requested period on the pinched torus, where it is infinite."""


class AmbiguityError(DickeError, RuntimeError):
    """Lattice continuity could not decide between two candidate sites."""


class ExtractionError(DickeError, RuntimeError):
    """Monodromy matrix extraction produced a non-integer transport."""


class NotFoundError(DickeError, LookupError):
    """A searched-for feature (defect, ESQPT peak) is absent."""


class UndefinedError(DickeError, ValueError):
    """Quantity is undefined for the given parameters (e.g. Tc in the normal phase)."""
