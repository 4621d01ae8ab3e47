"""Hard-thresholding recovery algorithms behind a single run loop.

IAD, NIAD and ADP carry two memory vectors u and v on top of their classical
counterparts IHT, NIHT and HTP; zeroing them every step gives back the
classical iteration exactly.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from service.errors import DegenerateStepError, InvalidArgumentError, SingularSystemError
from service.sparse_ops import (
    IndexSet,
    ProblemInstance,
    Vector,
    as_vector,
    gradient,
    hard_threshold_top_s,
    least_squares_on_support,
    relative_residual,
    residual,
    support,
    top_s_indices,
)

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 400
DEFAULT_RESIDUAL_TOL = 1e-6
DEFAULT_GAMMA = 0.1


class Algorithm(str, Enum):
    IHT = "iht"
    NIHT = "niht"
    HTP = "htp"
    IAD = "iad"
    NIAD = "niad"
    ADP = "adp"

    @property
    def uses_mu(self) -> bool:
        return self in (Algorithm.IHT, Algorithm.IAD)

    @property
    def uses_gamma(self) -> bool:
        return self in (Algorithm.IAD, Algorithm.NIAD, Algorithm.ADP)


class StopReason(str, Enum):
    RESIDUAL_TOL = "residual_tol"
    MAX_ITERS = "max_iters"
    DEGENERATE_STEP = "degenerate_step"
    SINGULAR_SYSTEM = "singular_system"


@dataclass(frozen=True)
class SolverConfig:
    algorithm: Algorithm
    s: int
    mu: float = 1.0
    gamma: float = DEFAULT_GAMMA
    max_iters: int = DEFAULT_MAX_ITERS
    residual_tol: float = DEFAULT_RESIDUAL_TOL
    x0: Optional[Vector] = field(default=None, compare=False)
    label: Optional[str] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if int(self.s) != self.s or self.s < 1:
            raise InvalidArgumentError(f"sparsity s must be a positive integer, got {self.s}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise InvalidArgumentError(f"gamma must be positive, got {self.gamma}")
        if self.algorithm.uses_mu and not (self.mu > 0 and math.isfinite(self.mu)):
            raise InvalidArgumentError(f"mu must be positive for {self.algorithm.value}, got {self.mu}")
        if self.max_iters < 1:
            raise InvalidArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.residual_tol >= 0:
            raise InvalidArgumentError(f"residual_tol must be nonnegative, got {self.residual_tol}")
        if self.x0 is not None:
            object.__setattr__(self, "x0", as_vector(self.x0, "x0"))

    @property
    def tag(self) -> str:
        if self.label:
            return self.label
        if self.algorithm.uses_mu:
            return f"{self.algorithm.value}:{self.mu:g}"
        return self.algorithm.value


@dataclass(frozen=True)
class IterState:
    x: Vector
    u: Vector
    v: Vector
    S: IndexSet
    mu_k: float
    k: int


@dataclass
class SolverResult:
    x_final: Vector
    support_final: IndexSet
    iterations_used: int
    stop_reason: StopReason
    relative_residual_history: List[float]
    error_history: Optional[List[float]] = None
    step_size_history: List[float] = field(default_factory=list)
    support_hit_iteration: Optional[int] = None
    error: Optional[str] = None


def _start(problem: ProblemInstance, config: SolverConfig, x0: Optional[Vector] = None) -> Vector:
    if x0 is None:
        x0 = config.x0
    if x0 is None:
        return np.zeros(problem.n)
    x0 = as_vector(x0, "x0")
    if x0.shape[0] != problem.n:
        raise InvalidArgumentError(f"x0 has length {x0.shape[0]}, expected {problem.n}")
    return x0


def _normalized_step(problem: ProblemInstance, d: Vector, S: IndexSet) -> float:
    """||d_S||^2 / ||A d_S||^2, the exact line-search step on support S."""
    if S.size == 0:
        raise DegenerateStepError("normalized step on an empty support")
    d_S = d[S]
    den = float(np.dot(problem.A[:, S] @ d_S, problem.A[:, S] @ d_S))
    if den == 0.0:
        raise DegenerateStepError(f"||A d_S|| = 0 on support {S.tolist()}")
    return float(np.dot(d_S, d_S)) / den


def _memory_init(problem: ProblemInstance, config: SolverConfig, corr0: Vector) -> Tuple[Vector, Vector]:
    u = np.zeros(problem.n)
    v = (config.gamma / (2.0 * (1.0 + config.gamma))) * corr0
    return u, v


def _memory_update(state: IterState, grad: Vector, gamma: float) -> Tuple[Vector, Vector]:
    u = -((1.0 - gamma) / (2.0 * (1.0 + gamma))) * grad + state.u / (1.0 + gamma)
    v = state.v / (1.0 + gamma)
    return u, v


def _first_support(problem: ProblemInstance, config: SolverConfig, x0: Vector, corr0: Vector) -> IndexSet:
    # A zero start has no support yet; use the s largest correlations instead.
    if not np.any(x0):
        return top_s_indices(corr0, config.s)
    return support(x0)


# --- alternating direction variants -------------------------------------------------


def iad_init(problem: ProblemInstance, config: SolverConfig, x0: Optional[Vector] = None) -> IterState:
    x0 = _start(problem, config, x0)
    corr0 = problem.A.T @ residual(problem.A, x0, problem.b)
    x1 = hard_threshold_top_s(x0 + 0.5 * config.mu * corr0, config.s)
    u, v = _memory_init(problem, config, corr0)
    return IterState(x=x1, u=u, v=v, S=support(x1), mu_k=config.mu, k=1)


def iad_step(problem: ProblemInstance, state: IterState, config: SolverConfig) -> IterState:
    grad = gradient(problem.A, state.x, problem.b)
    x_next = hard_threshold_top_s(state.x + config.mu * (-grad + state.u - state.v), config.s)
    u, v = _memory_update(state, grad, config.gamma)
    return IterState(x=x_next, u=u, v=v, S=support(x_next), mu_k=config.mu, k=state.k + 1)


def niad_init(problem: ProblemInstance, config: SolverConfig, x0: Optional[Vector] = None) -> IterState:
    x0 = _start(problem, config, x0)
    corr0 = problem.A.T @ residual(problem.A, x0, problem.b)
    mu1 = _normalized_step(problem, corr0, _first_support(problem, config, x0, corr0))
    x1 = hard_threshold_top_s(x0 + 0.5 * mu1 * corr0, config.s)
    u, v = _memory_init(problem, config, corr0)
    return IterState(x=x1, u=u, v=v, S=support(x1), mu_k=mu1, k=1)


def niad_step(problem: ProblemInstance, state: IterState, config: SolverConfig) -> IterState:
    grad = gradient(problem.A, state.x, problem.b)
    d = -grad + state.u - state.v
    mu_next = _normalized_step(problem, d, state.S)
    x_next = hard_threshold_top_s(state.x + mu_next * d, config.s)
    u, v = _memory_update(state, grad, config.gamma)
    return IterState(x=x_next, u=u, v=v, S=support(x_next), mu_k=mu_next, k=state.k + 1)


def adp_init(problem: ProblemInstance, config: SolverConfig, x0: Optional[Vector] = None) -> IterState:
    x0 = _start(problem, config, x0)
    corr0 = problem.A.T @ residual(problem.A, x0, problem.b)
    S1 = support(hard_threshold_top_s(x0 + 0.5 * corr0, config.s))
    x1 = least_squares_on_support(problem.A, problem.b, S1)
    u, v = _memory_init(problem, config, corr0)
    return IterState(x=x1, u=u, v=v, S=S1, mu_k=1.0, k=1)


def adp_step(problem: ProblemInstance, state: IterState, config: SolverConfig) -> IterState:
    grad = gradient(problem.A, state.x, problem.b)
    w = hard_threshold_top_s(state.x - grad + state.u - state.v, config.s)
    S_next = support(w)
    x_next = least_squares_on_support(problem.A, problem.b, S_next)
    u, v = _memory_update(state, grad, config.gamma)
    return IterState(x=x_next, u=u, v=v, S=S_next, mu_k=1.0, k=state.k + 1)


# --- classical baselines (u = v = 0 throughout) -------------------------------------


def _no_memory(problem: ProblemInstance) -> Tuple[Vector, Vector]:
    return np.zeros(problem.n), np.zeros(problem.n)


def baseline_init(problem: ProblemInstance, config: SolverConfig, x0: Optional[Vector] = None) -> IterState:
    x0 = _start(problem, config, x0)
    corr0 = problem.A.T @ residual(problem.A, x0, problem.b)
    u, v = _no_memory(problem)
    if config.algorithm is Algorithm.IHT:
        x1 = hard_threshold_top_s(x0 + config.mu * corr0, config.s)
        return IterState(x=x1, u=u, v=v, S=support(x1), mu_k=config.mu, k=1)
    if config.algorithm is Algorithm.NIHT:
        mu1 = _normalized_step(problem, corr0, _first_support(problem, config, x0, corr0))
        x1 = hard_threshold_top_s(x0 + mu1 * corr0, config.s)
        return IterState(x=x1, u=u, v=v, S=support(x1), mu_k=mu1, k=1)
    if config.algorithm is Algorithm.HTP:
        S1 = support(hard_threshold_top_s(x0 + corr0, config.s))
        x1 = least_squares_on_support(problem.A, problem.b, S1)
        return IterState(x=x1, u=u, v=v, S=S1, mu_k=1.0, k=1)
    raise InvalidArgumentError(f"{config.algorithm.value} is not a baseline algorithm")


def baseline_step(problem: ProblemInstance, state: IterState, config: SolverConfig) -> IterState:
    grad = gradient(problem.A, state.x, problem.b)
    u, v = _no_memory(problem)
    if config.algorithm is Algorithm.IHT:
        x_next = hard_threshold_top_s(state.x - config.mu * grad, config.s)
        return IterState(x=x_next, u=u, v=v, S=support(x_next), mu_k=config.mu, k=state.k + 1)
    if config.algorithm is Algorithm.NIHT:
        d = -grad
        mu_next = _normalized_step(problem, d, state.S)
        x_next = hard_threshold_top_s(state.x + mu_next * d, config.s)
        return IterState(x=x_next, u=u, v=v, S=support(x_next), mu_k=mu_next, k=state.k + 1)
    if config.algorithm is Algorithm.HTP:
        S_next = support(hard_threshold_top_s(state.x - grad, config.s))
        x_next = least_squares_on_support(problem.A, problem.b, S_next)
        return IterState(x=x_next, u=u, v=v, S=S_next, mu_k=1.0, k=state.k + 1)
    raise InvalidArgumentError(f"{config.algorithm.value} is not a baseline algorithm")


InitFn = Callable[..., IterState]
StepFn = Callable[[ProblemInstance, IterState, SolverConfig], IterState]

ALGORITHMS: Dict[Algorithm, Tuple[InitFn, StepFn]] = {
    Algorithm.IAD: (iad_init, iad_step),
    Algorithm.NIAD: (niad_init, niad_step),
    Algorithm.ADP: (adp_init, adp_step),
    Algorithm.IHT: (baseline_init, baseline_step),
    Algorithm.NIHT: (baseline_init, baseline_step),
    Algorithm.HTP: (baseline_init, baseline_step),
}


def run_solver(problem: ProblemInstance, config: SolverConfig) -> SolverResult:
    """Iterate until ||b - A x(k)|| / ||b|| <= residual_tol or k reaches max_iters."""
    if config.s > problem.n:
        raise InvalidArgumentError(f"sparsity {config.s} exceeds signal length {problem.n}")
    init, step = ALGORITHMS[config.algorithm]
    A, b = problem.A, problem.b
    x = _start(problem, config)
    if not np.any(b):
        # b = 0 is solved exactly by the zero vector, whatever x0 was
        x = np.zeros(problem.n)

    res_hist: List[float] = []
    err_hist: Optional[List[float]] = [] if problem.truth is not None else None
    mu_hist: List[float] = []
    hit: Optional[int] = None

    def record(x_k: Vector, k: int) -> float:
        nonlocal hit
        rel = relative_residual(A, x_k, b)
        res_hist.append(rel)
        if err_hist is not None:
            err_hist.append(float(np.linalg.norm(problem.truth - x_k)))
        if hit is None and problem.true_support is not None and np.array_equal(support(x_k), problem.true_support):
            hit = k
        return rel

    def result(reason: StopReason, iterations: int, error: Optional[str] = None) -> SolverResult:
        return SolverResult(
            x_final=x,
            support_final=support(x),
            iterations_used=iterations,
            stop_reason=reason,
            relative_residual_history=res_hist,
            error_history=err_hist,
            step_size_history=mu_hist,
            support_hit_iteration=hit,
            error=error,
        )

    rel = record(x, 0)
    if rel <= config.residual_tol:
        return result(StopReason.RESIDUAL_TOL, 0)

    k = 0
    try:
        state = init(problem, config)
        while True:
            k = state.k
            x = state.x
            mu_hist.append(state.mu_k)
            rel = record(x, k)
            if rel <= config.residual_tol:
                return result(StopReason.RESIDUAL_TOL, k)
            if k >= config.max_iters:
                return result(StopReason.MAX_ITERS, k)
            state = step(problem, state, config)
    except DegenerateStepError as exc:
        logger.debug("run_solver: %s aborted at k=%d: %s", config.tag, k, exc)
        return result(StopReason.DEGENERATE_STEP, k, str(exc))
    except SingularSystemError as exc:
        logger.debug("run_solver: %s aborted at k=%d: %s", config.tag, k, exc)
        return result(StopReason.SINGULAR_SYSTEM, k, str(exc))


class SolverService:
    """Runs solver configurations against problem instances and logs the outcome.

    `max_iters` and `residual_tol`, when given, become the defaults of every
    config built through `configure`; explicit keyword overrides still win.
    """

    def __init__(self, max_iters: Optional[int] = None, residual_tol: Optional[float] = None) -> None:
        self.max_iters = max_iters
        self.residual_tol = residual_tol
        self._logger = logging.getLogger(__name__)

    def configure(self, algorithm: Algorithm | str, s: int, **overrides) -> SolverConfig:
        if self.max_iters is not None:
            overrides.setdefault("max_iters", self.max_iters)
        if self.residual_tol is not None:
            overrides.setdefault("residual_tol", self.residual_tol)
        return SolverConfig(algorithm=Algorithm(algorithm), s=s, **overrides)

    def solve(self, problem: ProblemInstance, config: SolverConfig) -> SolverResult:
        result = run_solver(problem, config)
        if result.error:
            self._logger.warning("SolverService: %s stopped with %s: %s", config.tag, result.stop_reason.value, result.error)
        else:
            self._logger.info(
                "SolverService: %s stop=%s iterations=%d residual=%.3e",
                config.tag,
                result.stop_reason.value,
                result.iterations_used,
                result.relative_residual_history[-1],
            )
        return result
