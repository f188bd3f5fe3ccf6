"""Error taxonomy shared across the package.

ValidationError maps to CLI exit code 2, NumericalError to 3.
"""


class ValidationError(ValueError):
    """Bad inputs: malformed files, out-of-contract arguments."""


class NumericalError(RuntimeError):
    """Computation failed numerically (divergence, degenerate systems)."""
