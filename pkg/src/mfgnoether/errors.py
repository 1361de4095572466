"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where a closed form is defined."""


class DensityFloorError(DomainError):
    """A density value fell below the configured floor of a singular coupling."""


class SingularExponentError(DomainError):
    pass


class NotCanonicalError(ValueError):
    """The Hamiltonian must be normalized before this operation."""


class FlowDomainError(DomainError):
    """Group parameter or target incompatible with a finite symmetry flow."""


class NumericalFailure(ArithmeticError):
    """Non-finite values appeared during a numerical sweep."""


class ConfigError(ValueError):
    pass
