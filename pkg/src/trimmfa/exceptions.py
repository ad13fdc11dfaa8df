"""Errors raised while fitting.

Every per-start failure derives from :class:`FitError` so the multistart
driver can discard the start and move on.
"""


class FitError(RuntimeError):
    """A single start of the fitting algorithm could not continue."""


class SingularKernelError(FitError):
    """Low-rank covariance factorisation is numerically singular."""


class EmptyComponentError(FitError):
    """A component lost (almost) all of its posterior mass."""


class DegenerateThresholdError(FitError):
    """Every value offered to the constraint projection is zero."""


class AllStartsFailedError(FitError):
    """No start of the multistart driver produced a result."""

    def __init__(self, causes):
        self.causes = list(causes)
        lines = "; ".join(f"start {i}: {c}" for i, c in self.causes)
        super().__init__(f"all starts failed ({lines})")
