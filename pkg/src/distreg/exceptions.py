"""Exception hierarchy.

The CLI maps :class:`NumericalError` to exit code 2 and every other
:class:`DistregError` (and I/O errors) to exit code 1.
"""

from __future__ import annotations


class DistregError(Exception):
    """Base class for all package errors."""


class DataFormatError(DistregError, ValueError):
    """Malformed input file or inconsistent dataset."""


class DimensionMismatchError(DistregError, ValueError):
    pass


class FingerprintMismatchError(DistregError, ValueError):
    """Two embeddings (or a model and a query) come from different configs."""


class NumericalError(DistregError, ArithmeticError):
    pass


class SinkhornConvergenceError(NumericalError):
    def __init__(self, residual: float, iterations: int):
        self.residual = float(residual)
        self.iterations = int(iterations)
        super().__init__(
            f"Sinkhorn did not converge after {iterations} iterations "
            f"(marginal residual {residual:.3e})"
        )


class FactorizationError(NumericalError):
    pass


class DegenerateTargetError(DistregError, ValueError):
    """Evaluation targets have zero variance, so explained variance is undefined."""
