"""Exception and warning types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class AccuracyError(ArithmeticError):
    """A series or quadrature failed to reach its tolerance.

    ``partial`` holds the best value reached before giving up.
    """

    def __init__(self, message: str, partial: float | None = None):
        super().__init__(message)
        self.partial = partial


class NumericError(ArithmeticError):
    """A computation produced a non-finite value or a factorization failed."""


class TruncationWarning(UserWarning):
    """The analytic tail of a truncated integral exceeds the requested tolerance."""
