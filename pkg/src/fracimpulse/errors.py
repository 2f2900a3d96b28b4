"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


class NumericalError(ArithmeticError):
    """A numerical routine could not reach its target accuracy.

    ``partial`` holds the best value available when the routine gave up
    (``None`` when nothing meaningful was computed).
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class ValidationError(ValueError):
    """A system specification or bundle violates an invariant."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ContractError(ValueError):
    """Inputs are individually valid but incompatible with each other."""


class UnsupportedConfigurationError(ValueError):
    """The requested operation is not defined for this configuration (e.g. alpha <= 1/2)."""
