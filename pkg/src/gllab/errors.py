"""Exception taxonomy shared across the package.

Kept deliberately small: construction-time contract breaches are
InvariantError, bad arguments to otherwise healthy objects are DomainError,
and iterative procedures that fail to converge raise NumericFailure with the
iteration count attached.
"""


class GllabError(Exception):
    """Base class for everything raised on purpose by this package."""


class InvariantError(GllabError, ValueError):
    """A type-level invariant was violated (singular matrix, bad weights...)."""


class DomainError(GllabError, ValueError):
    """An argument is outside the mathematical domain of the operation."""


class NumericFailure(GllabError, RuntimeError):
    """An iterative numeric procedure did not converge.

    iterations: how many iterations ran before giving up.
    """

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class SpectralGapError(NumericFailure):
    """Poisson iteration showed no empirical spectral gap (no geometric decay)."""


class ScheduleRangeError(GllabError, ValueError):
    """A schedule/table-based quantity was requested outside its representable range."""


class ConfigError(GllabError, ValueError):
    """CLI configuration file failed validation."""
