"""Exception types shared across the package."""


class ConfigError(Exception):
    """Invalid or unparsable configuration (CLI exit code 1)."""


class VerificationFailure(Exception):
    """A verification suite check did not meet its tolerance (CLI exit code 2)."""


class NumericFailure(Exception):
    """Numerical breakdown: NaN loss, failed factorization, too many diverged paths
    (CLI exit code 3)."""


class SingularTime(ValueError):
    """Quantity requested at t = 0 where the inverse covariance is unbounded."""


class GridMismatch(ValueError):
    """Operation mixing objects defined on different time grids."""
