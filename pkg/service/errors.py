from __future__ import annotations

from typing import Optional, Sequence


class SparseRecoveryError(Exception):
    """Base class for every failure raised by the solver library."""


class InvalidArgumentError(SparseRecoveryError, ValueError):
    pass


class SingularSystemError(SparseRecoveryError):
    """Least squares on a support whose columns are (numerically) dependent."""

    def __init__(self, support: Sequence[int], message: Optional[str] = None) -> None:
        self.support = [int(i) for i in support]
        super().__init__(message or f"rank-deficient columns on support {self.support}")


class DegenerateStepError(SparseRecoveryError):
    """Normalized step size undefined (empty support or ||A d_S|| = 0)."""


class DegenerateSpectrumError(SparseRecoveryError):
    pass


class PreconditionError(SparseRecoveryError):
    pass


class TooLargeError(SparseRecoveryError):
    pass
