"""Dense building blocks shared by every recovery algorithm.

Vectors and matrices are plain float64 numpy arrays; an index set is a sorted
int64 array of 0-based column indices.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import linalg

from service.errors import InvalidArgumentError, SingularSystemError

logger = logging.getLogger(__name__)

Vector = NDArray[np.float64]
Matrix = NDArray[np.float64]
IndexSet = NDArray[np.int64]

# Relative tolerance on the diagonal of R when factoring A_S.
RANK_TOL = 1e-12


def as_vector(x: ArrayLike, name: str = "vector") -> Vector:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr


def as_matrix(a: ArrayLike, name: str = "matrix") -> Matrix:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgumentError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr


def as_index_set(indices: ArrayLike, n: int) -> IndexSet:
    idx = np.unique(np.asarray(indices, dtype=np.int64).ravel())
    if idx.size and (idx[0] < 0 or idx[-1] >= n):
        raise InvalidArgumentError(f"index set {idx.tolist()} out of range for universe {n}")
    return idx


@dataclass(frozen=True)
class ProblemInstance:
    """General CS model b = A x + e' with optional ground truth."""

    A: Matrix
    b: Vector
    truth: Optional[Vector] = None
    true_support: Optional[IndexSet] = None
    noise: Optional[Vector] = None

    def __post_init__(self) -> None:
        A = as_matrix(self.A, "A")
        b = as_vector(self.b, "b")
        m, n = A.shape
        if b.shape[0] != m:
            raise InvalidArgumentError(f"b has length {b.shape[0]}, expected {m}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

        truth = self.truth
        if truth is not None:
            truth = as_vector(truth, "truth")
            if truth.shape[0] != n:
                raise InvalidArgumentError(f"truth has length {truth.shape[0]}, expected {n}")
            object.__setattr__(self, "truth", truth)
        if self.true_support is not None:
            supp = as_index_set(self.true_support, n)
            if truth is not None and not np.array_equal(supp, support(truth)):
                raise InvalidArgumentError("true_support disagrees with support(truth)")
            object.__setattr__(self, "true_support", supp)
        elif truth is not None:
            object.__setattr__(self, "true_support", support(truth))
        if self.noise is not None:
            noise = as_vector(self.noise, "noise")
            if noise.shape[0] != m:
                raise InvalidArgumentError(f"noise has length {noise.shape[0]}, expected {m}")
            object.__setattr__(self, "noise", noise)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


def hard_threshold_by_value(x: ArrayLike, tau: float) -> Vector:
    """hard(x, tau): keep entries strictly larger than tau in magnitude."""
    if tau < 0:
        raise InvalidArgumentError(f"threshold must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    return np.where(np.abs(x) > tau, x, 0.0)


def top_s_indices(x: ArrayLike, s: int) -> IndexSet:
    """Indices of the s largest magnitudes; equal magnitudes go to the lower index."""
    x = np.asarray(x, dtype=np.float64)
    if s < 0 or s > x.shape[0]:
        raise InvalidArgumentError(f"sparsity {s} outside [0, {x.shape[0]}]")
    order = np.argsort(-np.abs(x), kind="stable")
    return np.sort(order[:s]).astype(np.int64)


def hard_threshold_top_s(x: ArrayLike, s: int) -> Vector:
    """H_s(x): keep the s largest-magnitude entries, zero the rest."""
    x = np.asarray(x, dtype=np.float64)
    keep = top_s_indices(x, s)
    out = np.zeros_like(x)
    out[keep] = x[keep]
    return out


def top_s_margin(x: ArrayLike, s: int) -> float:
    """Gap between the s-th and (s+1)-th largest magnitudes (inf when undefined).

    A small margin means H_s could pick a different support under rounding.
    """
    mags = np.sort(np.abs(np.asarray(x, dtype=np.float64)))[::-1]
    if s <= 0 or s >= mags.shape[0] or mags[s - 1] == 0.0:
        return float("inf")
    return float(mags[s - 1] - mags[s])


def support(x: ArrayLike) -> IndexSet:
    return np.flatnonzero(np.asarray(x)).astype(np.int64)


def _check_dims(A: Matrix, x: Vector, b: Vector) -> None:
    m, n = A.shape
    if x.shape != (n,) or b.shape != (m,):
        raise InvalidArgumentError(
            f"dimension mismatch: A is {m}x{n}, x has shape {x.shape}, b has shape {b.shape}"
        )


def residual(A: ArrayLike, x: ArrayLike, b: ArrayLike) -> Vector:
    """c = b - A x."""
    A, x, b = np.asarray(A, dtype=np.float64), np.asarray(x, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if A.ndim != 2:
        raise InvalidArgumentError(f"A must be 2-D, got shape {A.shape}")
    _check_dims(A, x, b)
    return b - A @ x


def gradient(A: ArrayLike, x: ArrayLike, b: ArrayLike) -> Vector:
    """Gradient of f(x) = 1/2 ||A x - b||^2, i.e. A^T (A x - b)."""
    A = np.asarray(A, dtype=np.float64)
    return A.T @ -residual(A, x, b)


def relative_residual(A: Matrix, x: Vector, b: Vector) -> float:
    """||b - A x|| / ||b||, defined as 0 when b = 0."""
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return 0.0
    return float(np.linalg.norm(residual(A, x, b))) / b_norm


def least_squares_on_support(A: ArrayLike, b: ArrayLike, S: ArrayLike) -> Vector:
    """argmin ||b - A z|| subject to supp(z) in S, via a QR factorization of A_S."""
    A = as_matrix(A, "A")
    b = as_vector(b, "b")
    m, n = A.shape
    if b.shape[0] != m:
        raise InvalidArgumentError(f"b has length {b.shape[0]}, expected {m}")
    S = as_index_set(S, n)
    z = np.zeros(n)
    if S.size == 0:
        return z
    if S.size > m:
        raise SingularSystemError(S, f"support of size {S.size} exceeds {m} measurements")

    Q, R = linalg.qr(A[:, S], mode="economic")
    diag = np.abs(np.diag(R))
    if diag.min() <= RANK_TOL * diag.max():
        raise SingularSystemError(S)
    z[S] = linalg.solve_triangular(R, Q.T @ b, lower=False)
    return z
