"""Exception types shared across the package.

Plain ``ValueError`` is used for domain and shape violations (bad quantile
level, mismatched dimensions, malformed graphs).  The classes below mark
failures that callers may want to handle differently: configuration problems
(CLI exit code 2), numerical breakdowns (exit code 3), and divergence of an
iterative fit.
"""


class ConfigError(Exception):
    """Invalid or inconsistent run configuration."""


class NumericalError(Exception):
    """A numerical operation failed beyond repair (singular matrix, vanishing density)."""


class DivergenceError(NumericalError):
    """An iterative fit blew up; carries the iteration at which it happened."""

    def __init__(self, iteration, norm):
        self.iteration = iteration
        self.norm = norm
        super().__init__(
            f"iterate norm {norm:.3e} exceeded 1e12 at iteration {iteration}; "
            "reduce the step size"
        )
