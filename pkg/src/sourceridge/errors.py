"""Exception types shared across the package."""


class DataError(Exception):
    """Malformed or inconsistent input data (bad files, shape mismatches,
    non-finite entries, zero-variance columns)."""


class NumericalError(Exception):
    """A numerical operation failed (factorization breakdown, out-of-range
    eigenvalues, degenerate objective)."""
