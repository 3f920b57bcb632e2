"""Shared exception types."""


class StructuralError(ValueError):
    """Malformed inputs: wrong shapes, empty batches, unknown identifiers."""


class NumericError(ArithmeticError):
    """Non-finite values encountered during a numerical computation."""


class ContractError(AssertionError):
    """A caller violated a documented precondition beyond tolerance."""
