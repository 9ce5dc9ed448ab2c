"""Exception types raised across the package."""


class KlmmError(Exception):
    """Base class for all package errors."""


class MonomorphicColumn(KlmmError):
    """A genotype column has zero variance and cannot be standardized."""

    def __init__(self, column: int):
        super().__init__(f"column {column} is monomorphic (zero variance)")
        self.column = column


class EmptyKernel(KlmmError):
    """Every SNP was excluded from the kernel."""


class NegativeEigenvalue(KlmmError):
    """Kernel eigenvalue below the clamping tolerance."""


class SingularDowndate(KlmmError):
    """Leave-one-out covariance is numerically singular."""


class SingularDesign(KlmmError):
    """Fixed-effect normal equations are numerically singular."""


class ConfigError(KlmmError, ValueError):
    """Invalid simulation or run configuration."""


class EmptyInput(KlmmError, ValueError):
    """A calibration routine received no P values."""


class MissingTruth(KlmmError):
    """Dataset metadata lacks causal ground truth."""


class FormatError(KlmmError, ValueError):
    """Malformed genotype container or table."""
