"""Exception types raised across the package."""


class CFFMError(Exception):
    pass


class DimensionError(CFFMError, ValueError):
    """Operand extents are incompatible with the operation."""


class ContractError(CFFMError, ValueError):
    """A documented precondition on arguments was violated."""


class NumericError(CFFMError, ArithmeticError):
    """A non-finite value showed up where finite values are required."""
