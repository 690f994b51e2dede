"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Bad user input: malformed data, invalid configuration, broken preconditions."""


class NumericalError(RuntimeError):
    """A numerical operation failed beyond recovery (singular factor, non-convergence)."""
