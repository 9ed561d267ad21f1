"""Exception taxonomy shared across the package.

The split mirrors how failures should be handled at the CLI boundary:
configuration problems exit with status 1, everything else is a genuine
bug or misuse and propagates.
"""


class ConfigurationError(ValueError):
    """A run configuration violates a documented gate (grid ratio, m0 mass, ...)."""


class StructuralError(ValueError):
    """The problem data itself is broken (singular B1, negative density, ...)."""


class CoverageError(ValueError):
    """The discretized initial measure misses too much of m0's mass."""


class NumericError(ArithmeticError):
    """A numeric quantity left its sane range (overflow, NaN in a sweep, ...)."""


class UsageError(ValueError):
    """An operation was called with inconsistent or unnormalized inputs."""
