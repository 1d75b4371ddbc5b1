"""Exception types shared across the package."""


class IetflowError(Exception):
    """Base class for all package errors."""


class ValidationError(IetflowError):
    """Malformed input data (bad permutation, bad lengths, bad config)."""


class NonGeneric(IetflowError):
    """Rauzy-Veech induction hit the measure-zero tie lambda_m == lambda_{pi^-1 m}.

    Carries ``step``, the induction step at which the tie occurred (or None
    when raised for a single step).
    """

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class Singular(IetflowError):
    """An orbit hit a discontinuity / tower boundary exactly."""


class NeedDeeperWindow(IetflowError):
    """The digit window or expansion is too shallow for the requested operation."""


class DegenerateGap(IetflowError):
    """Top-2 singular value gap too small to separate Oseledets directions."""
