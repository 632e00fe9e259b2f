"""Exception hierarchy for the covariance toolkit.

Every numerical failure mode raised by the library derives from
:class:`SafcovError`, so callers can catch one base class at the
boundary (the CLI does exactly that).
"""


class SafcovError(Exception):
    """Base class for all toolkit errors."""


class NotPositiveDefinite(SafcovError):
    """A matrix required to be positive definite failed the relative PD test."""

    def __init__(self, message="matrix is not positive definite", min_eig=None):
        super().__init__(message)
        self.min_eig = min_eig


class SingularInnerSystem(SafcovError):
    """The small r-by-r system inside a low-rank solve is singular."""


class NonConvergence(SafcovError):
    """An iterative solver exhausted its iteration budget.

    The best iterate is attached so callers can decide whether to use it.
    """

    def __init__(self, message="iteration budget exhausted", best=None, n_iter=None):
        super().__init__(message)
        self.best = best
        self.n_iter = n_iter


class DegenerateInput(SafcovError):
    """Input data violates a variance/rank precondition (e.g. a constant series)."""


class InsufficientDimensions(SafcovError):
    """The panel is too small for the requested operation."""


class NumericalBreakdown(SafcovError):
    """A quantity that must be positive for the algebra to proceed is not."""


class EigensolverError(SafcovError):
    """The dense symmetric eigensolver failed to converge."""

    def __init__(self, message="eigensolver did not converge", info=None):
        super().__init__(message)
        self.info = info


class PanelFormatError(SafcovError):
    """A CSV panel could not be parsed; carries row/column location."""

    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column
