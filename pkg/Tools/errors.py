# errors.py
# Exception hierarchy shared by every Lattice_Recon package.

from typing import Optional


class ReconError(Exception):
    """Base class for all reconstruction errors."""
    pass


class ConfigError(ReconError, ValueError):
    """Scenario JSON or environment settings are malformed."""
    pass


class GeometryError(ReconError, ValueError):
    """Array geometry is invalid or violates the PSF containment margin."""
    pass


class DimensionError(ReconError, ValueError):
    """Vector or matrix sizes do not agree."""
    pass


class DegeneratePriorError(ReconError, ValueError):
    """The brightness prior has zero variance, so Sigma_x cannot be inverted."""
    pass


class ZeroPivotError(ReconError, ArithmeticError):
    """Incomplete factorization met a zero (or non-positive) pivot."""

    def __init__(self, row: int, pivot: float = 0.0):
        self.row = int(row)
        self.pivot = float(pivot)
        super().__init__(
            f"ILU pivot {self.pivot:.3e} at row {self.row}: "
            "increase the fill or check that the matrix is SPD"
        )


class ConvergenceError(ReconError, RuntimeError):
    """An iterative solver stopped without reaching its tolerance."""

    def __init__(self, message: str, iterations: int = 0, residual: Optional[float] = None):
        self.iterations = int(iterations)
        self.residual = residual
        super().__init__(f"{message} (iterations={self.iterations}, residual={residual})")


class NanDetectedError(ConvergenceError):
    """NaN or inf appeared in the iterates."""
    pass


class GmmCollapseError(ReconError, RuntimeError):
    """Every EM restart collapsed one component: the histogram looks unimodal."""
    pass


class ThresholdError(ReconError, ValueError):
    """No equal-likelihood crossing between the two mixture modes."""
    pass


class TuningError(ReconError, RuntimeError):
    """Every grid point of a hyperparameter search failed."""
    pass


class BenchError(ReconError, RuntimeError):
    """A benchmark stage failed; the message carries the scenario context."""
    pass
