"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularityError(DomainError):
    """Evaluation requested exactly at a singular point (for example p = 0 or 1)."""


class DegenerateDistributionError(ValueError):
    """The requested distribution has collapsed to a point mass.

    Raised instead of evaluating a Dirac delta numerically; callers must
    special-case the degenerate limit themselves.
    """


class ConvergenceError(RuntimeError):
    """A truncated series could not reach the configured tail tolerance."""


class AdaptationError(RuntimeError):
    """MCMC proposal adaptation failed (no acceptances over a long window)."""
