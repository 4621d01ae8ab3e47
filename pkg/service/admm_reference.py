"""Reference ADMM iteration for l0-regularized least squares after variable splitting.

The raw three-step iteration (r, x, y) is kept here as an oracle: the unrolled
x-update rebuilds every iterate from the x-history alone, which is what the
memory terms of IAD are derived from.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from service.errors import InvalidArgumentError
from service.solver_service import Algorithm, SolverConfig, iad_init, iad_step
from service.sparse_ops import (
    ProblemInstance,
    Vector,
    as_vector,
    hard_threshold_by_value,
    hard_threshold_top_s,
    residual,
    top_s_margin,
)

logger = logging.getLogger(__name__)

# Entries this close to a threshold (relative to the largest entry) may flip under rounding.
BOUNDARY_TOL = 1e-9


@dataclass(frozen=True)
class AdmmParams:
    alpha: float
    beta: float
    tau: float

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "tau"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise InvalidArgumentError(f"{name} must be positive, got {value}")

    @property
    def gamma(self) -> float:
        """alpha * beta, the only way alpha and beta enter the x-update."""
        return self.alpha * self.beta

    @property
    def threshold(self) -> float:
        return math.sqrt(2.0 * self.tau / self.beta)


@dataclass(frozen=True)
class AdmmState:
    x: Vector
    r: Vector
    y: Vector
    k: int = 0


@dataclass
class EquivalenceReport:
    iterations: int
    max_deviation: float = 0.0
    max_scaled_deviation: float = 0.0
    boundary_inconclusive: bool = False
    deviations: List[float] = field(default_factory=list)

    def passed(self, tol: float) -> bool:
        return self.boundary_inconclusive or self.max_scaled_deviation <= tol


def _check_state(problem: ProblemInstance, state: AdmmState) -> None:
    if state.x.shape != (problem.n,) or state.r.shape != (problem.m,) or state.y.shape != (problem.m,):
        raise InvalidArgumentError(
            f"state shapes x={state.x.shape} r={state.r.shape} y={state.y.shape} "
            f"do not match a {problem.m}x{problem.n} problem"
        )


def _admm_x_argument(problem: ProblemInstance, x: Vector, r_next: Vector, params: AdmmParams) -> Vector:
    return x + (params.tau / params.gamma) * (problem.A.T @ r_next)


def admm_l0_step(problem: ProblemInstance, state: AdmmState, params: AdmmParams) -> AdmmState:
    _check_state(problem, state)
    g = params.gamma
    A, b = problem.A, problem.b

    r_next = (g / (1.0 + g)) * (state.y / params.beta + b - A @ state.x)
    x_next = hard_threshold_by_value(_admm_x_argument(problem, state.x, r_next, params), params.threshold)
    y_next = state.y - params.beta * (A @ x_next + r_next - b)
    return AdmmState(x=x_next, r=r_next, y=y_next, k=state.k + 1)


def run_admm_l0(
    problem: ProblemInstance,
    params: AdmmParams,
    x0: Sequence[float],
    max_iters: int,
) -> List[AdmmState]:
    """Trajectory of length max_iters + 1 starting from (x0, y(0) = 0)."""
    if max_iters < 1:
        raise InvalidArgumentError(f"max_iters must be >= 1, got {max_iters}")
    x0 = as_vector(x0, "x0")
    state = AdmmState(x=x0.copy(), r=np.zeros(problem.m), y=np.zeros(problem.m), k=0)
    _check_state(problem, state)
    trajectory = [state]
    for _ in range(max_iters):
        state = admm_l0_step(problem, state, params)
        trajectory.append(state)
    return trajectory


def _unrolled_argument(
    problem: ProblemInstance,
    params: AdmmParams,
    history: Sequence[Vector],
    k: int,
) -> Vector:
    if k < 1:
        raise InvalidArgumentError(f"unrolled update needs k >= 1, got {k}")
    if len(history) < k + 1:
        raise InvalidArgumentError(f"history holds {len(history)} iterates, need x(0)..x({k})")
    A, b = problem.A, problem.b
    g, tau = params.gamma, params.tau
    grads = [A.T @ residual(A, history[i], b) for i in range(k + 1)]

    arg = history[k] + (2.0 * tau / (1.0 + g)) * grads[k]
    for i in range(1, k):
        arg = arg + tau * (1.0 - g) * (1.0 + g) ** (-(k + 1 - i)) * grads[i]
    return arg - (g * tau / (1.0 + g) ** (k + 1)) * grads[0]


def unrolled_x_update(
    problem: ProblemInstance,
    params: AdmmParams,
    history: Sequence[Vector],
    k: int,
) -> Vector:
    """x(k+1) rebuilt from x(0)..x(k) without the splitting variable or the multiplier."""
    return hard_threshold_by_value(_unrolled_argument(problem, params, history, k), params.threshold)


def _scale(values: Vector) -> float:
    return max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0


def _near(values: Vector, threshold: float) -> bool:
    return bool(np.any(np.abs(np.abs(values) - threshold) <= BOUNDARY_TOL * _scale(values)))


def check_unrolled_equivalence(
    problem: ProblemInstance,
    params: AdmmParams,
    x0: Sequence[float],
    iters: int,
) -> EquivalenceReport:
    if iters < 2:
        raise InvalidArgumentError(f"equivalence check needs iters >= 2, got {iters}")
    trajectory = run_admm_l0(problem, params, x0, iters)
    history = [state.x for state in trajectory]
    report = EquivalenceReport(iterations=iters)

    for k in range(1, iters):
        direct = trajectory[k + 1].x
        arg = _unrolled_argument(problem, params, history, k)
        rebuilt = hard_threshold_by_value(arg, params.threshold)
        alg_arg = _admm_x_argument(problem, history[k], trajectory[k + 1].r, params)
        if _near(arg, params.threshold) or _near(alg_arg, params.threshold):
            report.boundary_inconclusive = True

        dev = float(np.max(np.abs(direct - rebuilt))) if direct.size else 0.0
        scale = max(1.0, float(np.max(np.abs(direct))))
        report.deviations.append(dev)
        report.max_deviation = max(report.max_deviation, dev)
        report.max_scaled_deviation = max(report.max_scaled_deviation, dev / scale)

    logger.debug(
        "check_unrolled_equivalence: iters=%d max_dev=%.3e boundary=%s",
        iters,
        report.max_deviation,
        report.boundary_inconclusive,
    )
    return report


def r_recurrence_gap(problem: ProblemInstance, params: AdmmParams, trajectory: Sequence[AdmmState]) -> float:
    """Largest violation of r(k+2) - r(k+1)/(1+ab) = ab/(1+ab) (2c(k+1) - c(k))."""
    g = params.gamma
    A, b = problem.A, problem.b
    worst = 0.0
    for k in range(len(trajectory) - 2):
        c_k = residual(A, trajectory[k].x, b)
        c_k1 = residual(A, trajectory[k + 1].x, b)
        lhs = trajectory[k + 2].r - trajectory[k + 1].r / (1.0 + g)
        rhs = (g / (1.0 + g)) * (2.0 * c_k1 - c_k)
        worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    return worst


def _iad_explicit_argument(
    problem: ProblemInstance,
    config: SolverConfig,
    history: Sequence[Vector],
    k: int,
) -> Vector:
    A, b = problem.A, problem.b
    gamma, mu = config.gamma, config.mu
    grads = [A.T @ residual(A, history[i], b) for i in range(k + 1)]
    inner = grads[k].copy()
    for i in range(1, k):
        inner = inner + ((1.0 - gamma) / 2.0) * (1.0 + gamma) ** (-(k - i)) * grads[i]
    inner = inner - (gamma / (2.0 * (1.0 + gamma) ** k)) * grads[0]
    return history[k] + mu * inner


def unrolled_iad_update(
    problem: ProblemInstance,
    config: SolverConfig,
    history: Sequence[Vector],
    k: int,
) -> Vector:
    """IAD's x(k+1) from the explicit sums over past residual correlations."""
    if k < 1 or len(history) < k + 1:
        raise InvalidArgumentError(f"need x(0)..x({k}) with k >= 1, got {len(history)} iterates")
    return hard_threshold_top_s(_iad_explicit_argument(problem, config, history, k), config.s)


def check_iad_recursion(
    problem: ProblemInstance,
    config: SolverConfig,
    iters: int,
    x0: Optional[Sequence[float]] = None,
) -> EquivalenceReport:
    """Compare the u/v memory recursion of IAD with the explicit-sum update."""
    if config.algorithm is not Algorithm.IAD:
        raise InvalidArgumentError(f"memory recursion check is defined for IAD, got {config.algorithm}")
    if iters < 2:
        raise InvalidArgumentError(f"recursion check needs iters >= 2, got {iters}")
    start = np.zeros(problem.n) if x0 is None else as_vector(x0, "x0")
    state = iad_init(problem, config, start)
    history = [start, state.x]
    report = EquivalenceReport(iterations=iters)

    for k in range(1, iters):
        state = iad_step(problem, state, config)
        history.append(state.x)
        arg = _iad_explicit_argument(problem, config, history, k)
        rebuilt = hard_threshold_top_s(arg, config.s)
        if top_s_margin(arg, config.s) <= BOUNDARY_TOL * _scale(arg):
            report.boundary_inconclusive = True

        dev = float(np.max(np.abs(state.x - rebuilt)))
        scale = max(1.0, float(np.max(np.abs(state.x))))
        report.deviations.append(dev)
        report.max_deviation = max(report.max_deviation, dev)
        report.max_scaled_deviation = max(report.max_scaled_deviation, dev / scale)
    return report
