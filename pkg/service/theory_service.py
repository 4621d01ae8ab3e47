"""Convergence constants and closed-form error bounds for IAD, NIAD and ADP.

Everything here is a pure function of a few scalars, except `exact_rip_constant`
which enumerates supports of a small dense matrix.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike

from service.errors import DegenerateSpectrumError, InvalidArgumentError, PreconditionError, TooLargeError
from service.solver_service import Algorithm
from service.sparse_ops import as_matrix

logger = logging.getLogger(__name__)

# |lambda - b| below this uses the limit form of the removable singularity.
EQUAL_ROOT_TOL = 1e-12
RIP_ENUMERATION_LIMIT = 1_000_000
_RIP_BATCH = 4096

SQRT3 = math.sqrt(3.0)
SQRT2 = math.sqrt(2.0)

ANALYZED = (Algorithm.IAD, Algorithm.NIAD, Algorithm.ADP)


@dataclass(frozen=True)
class TheoryInputs:
    algorithm: Algorithm
    delta: float
    gamma: float
    mu: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.algorithm not in ANALYZED:
            raise InvalidArgumentError(f"no convergence analysis for {self.algorithm.value}")
        if not 0.0 <= self.delta < 1.0:
            raise InvalidArgumentError(f"delta must lie in [0, 1), got {self.delta}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InvalidArgumentError(f"gamma must be positive, got {self.gamma}")
        if self.algorithm is Algorithm.IAD and not (self.mu > 0 and math.isfinite(self.mu)):
            raise InvalidArgumentError(f"mu must be positive, got {self.mu}")


@dataclass(frozen=True)
class Spectrum:
    """Eigen-structure of [[b1, b2], [b, b]], the matrix driving the memory recursion."""

    b: float
    b1: float
    b2: float
    lam1: float
    lam2: float
    omega1: float
    omega2: float

    @property
    def root_gap(self) -> float:
        return self.lam1 - self.lam2

    @property
    def rate(self) -> float:
        return max(abs(self.lam1), abs(self.lam2), self.b)

    # Entry (0,0) of M^(p+1) is P1 lam1^p - Q1 lam2^p; entry (0,1) is P2 lam1^p - Q2 lam2^p.
    @property
    def P1(self) -> float:
        return self.omega1 + self.b1 / 2.0

    @property
    def Q1(self) -> float:
        return self.omega1 - self.b1 / 2.0

    @property
    def P2(self) -> float:
        return self.omega2 + self.b2 / 2.0

    @property
    def Q2(self) -> float:
        return self.omega2 - self.b2 / 2.0


@dataclass(frozen=True)
class TheoryBounds:
    algorithm: Algorithm
    k: int
    rho: float
    b: float
    b1: float
    b2: float
    b5: float
    b6: float
    b7: float
    b8: float
    b9: float
    lam1: float
    lam2: float
    omega1: float
    omega2: float
    theta: Tuple[float, float, float, float]
    converges: bool
    c: Optional[Tuple[float, float, float, float, float, float, float]] = None

    @property
    def rate(self) -> float:
        return max(self.lam1, self.lam2, self.b)


@dataclass(frozen=True)
class RecurrenceSpec:
    b: float
    b1: float
    b2: float
    b3: float
    b4: float
    a1: float
    a2: float

    def __post_init__(self) -> None:
        for name in ("b1", "b2", "b3", "b4", "a1", "a2"):
            value = getattr(self, name)
            if not (value >= 0 and math.isfinite(value)):
                raise InvalidArgumentError(f"{name} must be nonnegative, got {value}")
        if not (self.b > 0 and math.isfinite(self.b)):
            raise InvalidArgumentError(f"b must be positive, got {self.b}")


@dataclass(frozen=True)
class RecursionWeights:
    on_a2: float
    on_a1: float
    on_b3b2: float
    on_b4: float


@dataclass(frozen=True)
class ConvergenceCriteria:
    rho_test: bool
    spectral_test: bool
    recurrence_test: bool

    @property
    def agree(self) -> bool:
        return self.rho_test == self.spectral_test == self.recurrence_test


# --- series unrolling -------------------------------------------------------------------


def unroll_recurrence(
    c1: float,
    c2: float,
    c3: float,
    a: Sequence[Union[float, ArrayLike]],
    b1_init: Union[float, ArrayLike],
    k: int,
) -> Union[float, np.ndarray]:
    """b(k+1) for b(k+2) = c1 b(k+1) + c2 a(k+1) + c3 a(k), from b(1) and a(0)..a(k).

    Works for scalar or vector series.
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    if len(a) < k + 1:
        raise InvalidArgumentError(f"need a(0)..a({k}), got {len(a)} terms")
    terms = [np.asarray(x, dtype=np.float64) for x in a[: k + 1]]
    out = c1**k * np.asarray(b1_init, dtype=np.float64) + c2 * terms[k]
    tail = sum((c1 ** (k - 1 - i) * terms[i] for i in range(1, k)), np.zeros_like(terms[0]))
    out = out + (c1 * c2 + c3) * tail + c1 ** (k - 1) * c3 * terms[0]
    return float(out) if out.ndim == 0 else out


# --- two-root recursion ----------------------------------------------------------------


def spectrum(b: float, b1: float, b2: float) -> Spectrum:
    disc = (b - b1) ** 2 + 4.0 * b * b2
    if disc <= 0.0:
        raise DegenerateSpectrumError(f"double root: (b - b1)^2 + 4 b b2 = 0 at b={b}, b1={b1}, b2={b2}")
    root = math.sqrt(disc)
    return Spectrum(
        b=b,
        b1=b1,
        b2=b2,
        lam1=(b + b1 + root) / 2.0,
        lam2=(b + b1 - root) / 2.0,
        omega1=(-b * b1 + b1 * b1 + 2.0 * b * b2) / (2.0 * root),
        omega2=(b + b1) * b2 / (2.0 * root),
    )


def _theta(lam: float, b: float, k: int) -> Tuple[float, float]:
    """Weights (on lam^(k-2), on b^(k-2)) of sum_{p<k-2} lam^p b^(k-3-p)."""
    if abs(lam - b) <= EQUAL_ROOT_TOL:
        return (k - 2) / lam, 0.0
    return 1.0 / (lam - b), -1.0 / (lam - b)


def _partial_geometric(lam: float, k: int) -> float:
    """sum_{p=0}^{k-3} lam^p."""
    if abs(1.0 - lam) <= EQUAL_ROOT_TOL:
        return float(k - 2)
    return (1.0 - lam ** (k - 2)) / (1.0 - lam)


def memory_recursion_weights(b: float, b1: float, b2: float, k: int) -> RecursionWeights:
    """Weights of a(2), a(1), b3*b^2 and b4 in the bound on a(k+1)."""
    if k < 2:
        raise InvalidArgumentError(f"k must be >= 2, got {k}")
    sp = spectrum(b, b1, b2)
    p = k - 2
    on_a2 = sp.P1 * sp.lam1**p - sp.Q1 * sp.lam2**p
    on_a1 = sp.P2 * sp.lam1**p - sp.Q2 * sp.lam2**p

    t11, t12 = _theta(sp.lam1, b, k)
    t21, t22 = _theta(sp.lam2, b, k)
    theta1 = t11 * sp.lam1**p + t12 * b**p
    theta2 = t21 * sp.lam2**p + t22 * b**p
    on_b3b2 = b**p + sp.P1 * theta1 - sp.Q1 * theta2
    on_b4 = 1.0 + sp.P1 * _partial_geometric(sp.lam1, k) - sp.Q1 * _partial_geometric(sp.lam2, k)
    return RecursionWeights(on_a2=on_a2, on_a1=on_a1, on_b3b2=on_b3b2, on_b4=on_b4)


def memory_recursion_bound(spec: RecurrenceSpec, k: int) -> float:
    """Closed-form upper bound on a(k+1), with a(1) carried without its factor b."""
    w = memory_recursion_weights(spec.b, spec.b1, spec.b2, k)
    return w.on_a2 * spec.a2 + w.on_a1 * spec.a1 + w.on_b3b2 * spec.b3 * spec.b**2 + w.on_b4 * spec.b4


def memory_recursion_exact(spec: RecurrenceSpec, k: int) -> float:
    """a(k+1) of the recursion run with equality; memory_recursion_bound exceeds it by on_a1 (1-b) a(1)."""
    w = memory_recursion_weights(spec.b, spec.b1, spec.b2, k)
    return w.on_a2 * spec.a2 + w.on_a1 * spec.b * spec.a1 + w.on_b3b2 * spec.b3 * spec.b**2 + w.on_b4 * spec.b4


# --- convergence constants -----------------------------------------------------------


def _algorithm_constants(inputs: TheoryInputs) -> Tuple[float, float, float, float, float, float, float, float]:
    """(rho, b1, b2, b5, b6, b7, b8, b9) for the given algorithm."""
    d, g, mu = inputs.delta, inputs.gamma, inputs.mu
    if inputs.algorithm is Algorithm.IAD:
        b1 = SQRT3 * (abs(1.0 - mu) + mu * d)
        return (
            2.0 * (1.0 - b1) / (SQRT3 * mu * (1.0 + d)),
            b1,
            SQRT3 * mu * abs(1.0 - g) * (1.0 + d) / 2.0,
            SQRT3 * mu * g * (1.0 + d),
            mu * math.sqrt(3.0 * (1.0 + d)) / (1.0 + g),
            mu * math.sqrt(3.0 * (1.0 + d)),
            SQRT3 * (abs(mu / 2.0 - 1.0) + mu * d / 2.0),
            0.5 * mu * math.sqrt(3.0 * (1.0 + d)),
        )
    if inputs.algorithm is Algorithm.NIAD:
        return (
            2.0 * (1.0 - (2.0 * SQRT3 + 1.0) * d) / (SQRT3 * (1.0 + d)),
            2.0 * SQRT3 * d / (1.0 - d),
            SQRT3 * abs(1.0 - g) * (1.0 + d) / (2.0 * (1.0 - d)),
            SQRT3 * g * (1.0 + d) / (1.0 - d),
            math.sqrt(3.0 * (1.0 + d)) / ((1.0 + g) * (1.0 - d)),
            math.sqrt(3.0 * (1.0 + d)) / (1.0 - d),
            SQRT3 * (1.0 + 3.0 * d) / (2.0 * (1.0 + d)),
            math.sqrt(3.0 * (1.0 + d)) / (2.0 * (1.0 - d)),
        )
    b1 = math.sqrt(2.0 * d * d / (1.0 - d * d))
    return (
        SQRT2 * (math.sqrt(1.0 - d * d) - SQRT2 * d) / (1.0 + d),
        b1,
        abs(1.0 - g) * math.sqrt((1.0 + d) / (2.0 * (1.0 - d))),
        g * math.sqrt(2.0 * (1.0 + d) / (1.0 - d)),
        math.sqrt(2.0 / (1.0 - d)) / (1.0 + g),
        math.sqrt(1.0 + d) / (1.0 - d) + math.sqrt(2.0 / (1.0 - d)),
        b1,
        1.0 / math.sqrt(2.0 * (1.0 - d)) + math.sqrt(1.0 + d) / (1.0 - d),
    )


def convergence_constants(inputs: TheoryInputs, k: int = 2) -> TheoryBounds:
    """All constants of the error bound at iteration k (k only matters when a root equals b)."""
    if k < 2:
        raise InvalidArgumentError(f"k must be >= 2, got {k}")
    rho, b1, b2, b5, b6, b7, b8, b9 = _algorithm_constants(inputs)
    b = 1.0 / (1.0 + inputs.gamma)
    sp = spectrum(b, b1, b2)
    converges = rho > abs(1.0 - inputs.gamma) / inputs.gamma
    t11, t12 = _theta(sp.lam1, b, k)
    t21, t22 = _theta(sp.lam2, b, k)

    c = None
    if converges:
        P1, Q1, P2, Q2 = sp.P1, sp.Q1, sp.P2, sp.Q2
        start_x = b1 * b8 + b * b5
        start_e = b1 * b9 - b * b6 + b7
        tail = 1.0 + P1 * t12 - Q1 * t22
        c = (
            start_x * P1 + b8 * P2 + b * b * b5 * P1 * t11,
            -start_x * Q1 - b8 * Q2 - b * b * b5 * Q1 * t21,
            tail * b5,
            (1.0 + P1 / (1.0 - sp.lam1) - Q1 / (1.0 - sp.lam2)) * b7,
            start_e * P1 + b9 * P2 - b * b * b6 * P1 * t11 - b7 * P1 / (1.0 - sp.lam1),
            -start_e * Q1 - b9 * Q2 + b * b * b6 * Q1 * t21 + b7 * Q1 / (1.0 - sp.lam2),
            -tail * b6,
        )

    return TheoryBounds(
        algorithm=inputs.algorithm,
        k=k,
        rho=rho,
        b=b,
        b1=b1,
        b2=b2,
        b5=b5,
        b6=b6,
        b7=b7,
        b8=b8,
        b9=b9,
        lam1=sp.lam1,
        lam2=sp.lam2,
        omega1=sp.omega1,
        omega2=sp.omega2,
        theta=(t11, t12, t21, t22),
        converges=converges,
        c=c,
    )


def convergence_criteria(inputs: TheoryInputs) -> ConvergenceCriteria:
    rho, b1, b2, *_ = _algorithm_constants(inputs)
    b = 1.0 / (1.0 + inputs.gamma)
    sp = spectrum(b, b1, b2)
    return ConvergenceCriteria(
        rho_test=rho > abs(1.0 - inputs.gamma) / inputs.gamma,
        spectral_test=0.0 < b < 1.0 and max(abs(sp.lam1), abs(sp.lam2)) < 1.0,
        recurrence_test=(1.0 - b) * (1.0 - b1) > b * b2,
    )


def _require_convergent(inputs: TheoryInputs, k: int) -> TheoryBounds:
    bounds = convergence_constants(inputs, k)
    if not bounds.converges or bounds.c is None:
        raise PreconditionError(
            f"{inputs.algorithm.value} does not converge at delta={inputs.delta}, gamma={inputs.gamma}: "
            f"rho={bounds.rho:.6g} <= |1-gamma|/gamma"
        )
    return bounds


def error_bound(inputs: TheoryInputs, k: int, x0_err: float, noise_norm: float) -> float:
    """Upper bound on ||x - x(k+1)|| from ||x - x(0)|| and the noise level ||e'||."""
    if x0_err < 0 or noise_norm < 0:
        raise InvalidArgumentError("x0_err and noise_norm must be nonnegative")
    bounds = _require_convergent(inputs, k)
    c1, c2, c3, c4, c5, c6, c7 = bounds.c
    p = k - 2
    l1, l2, bk = bounds.lam1**p, bounds.lam2**p, bounds.b**k
    return (c1 * l1 + c2 * l2 + c3 * bk) * x0_err + (c4 + c5 * l1 + c6 * l2 + c7 * bk) * noise_norm


def worst_case_error_chain(inputs: TheoryInputs, x0_err: float, noise_norm: float, k_max: int) -> List[float]:
    """Worst-case error sequence a(0)..a(k_max) with every proof inequality taken as equality."""
    if k_max < 2:
        raise InvalidArgumentError(f"k_max must be >= 2, got {k_max}")
    bounds = _require_convergent(inputs, 2)
    b, b1, b2 = bounds.b, bounds.b1, bounds.b2
    b3 = bounds.b5 * x0_err - bounds.b6 * noise_norm
    b4 = bounds.b7 * noise_norm

    a = [x0_err, bounds.b8 * x0_err + bounds.b9 * noise_norm]
    memory = 0.0  # sum_{i=1}^{k-1} b^(k-i) a(i)
    for k in range(1, k_max):
        a.append(b1 * a[k] + b2 * memory + b3 * b**k + b4)
        memory = b * (memory + a[k])
    return a


def support_identification_iterations(x_min: float, x0_err: float, c_sum: float, rate: float) -> int:
    if x_min <= 0 or x0_err <= 0:
        raise InvalidArgumentError("x_min and x0_err must be positive")
    if c_sum <= 0:
        raise PreconditionError(f"coefficient sum must be positive, got {c_sum}")
    if not 0.0 < rate < 1.0:
        raise PreconditionError(f"contraction rate must lie in (0, 1), got {rate}")
    return math.ceil((math.log(x_min / x0_err) - math.log(c_sum)) / math.log(rate) + 3.0)


def support_recovery_iterations(x_min: float, x0_err: float, bounds: TheoryBounds) -> int:
    """Iterations after which the support is guaranteed exact in the noiseless case."""
    if not bounds.converges or bounds.c is None:
        raise PreconditionError(f"{bounds.algorithm.value} bounds are not convergent")
    c1, c2, c3 = bounds.c[:3]
    return support_identification_iterations(x_min, x0_err, c1 + c2 + c3 * bounds.b**2, bounds.rate)


# --- restricted isometry ----------------------------------------------------------------


def exact_rip_constant(A: ArrayLike, s: int) -> float:
    """delta_s of A by enumerating every size-s column subset.

    Eigenvalues of principal submatrices interlace, so subsets of size exactly s
    cover every |T| <= s.
    """
    A = as_matrix(A, "A")
    n = A.shape[1]
    if not 1 <= s <= n:
        raise InvalidArgumentError(f"order s must lie in [1, {n}], got {s}")
    count = math.comb(n, s)
    if count > RIP_ENUMERATION_LIMIT:
        raise TooLargeError(f"C({n}, {s}) = {count} supports exceeds {RIP_ENUMERATION_LIMIT}")

    gram = A.T @ A
    subsets = itertools.combinations(range(n), s)
    worst = 0.0
    while True:
        batch = np.array(list(itertools.islice(subsets, _RIP_BATCH)), dtype=np.int64)
        if batch.size == 0:
            break
        sub = gram[batch[:, :, None], batch[:, None, :]]
        eig = np.linalg.eigvalsh(sub)
        worst = max(worst, float(np.max(np.maximum(eig[:, -1] - 1.0, 1.0 - eig[:, 0]))))
    logger.debug("exact_rip_constant: n=%d s=%d supports=%d delta=%.6f", n, s, count, worst)
    return worst
