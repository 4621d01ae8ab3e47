"""Seeded Monte-Carlo harness for exact-reconstruction-rate curves.

Every trial owns its random stream: the seed is a stable hash of
(master_seed, algorithm tag, s, trial index), and the matrix, signal and noise
draw from separate Philox generators keyed off that seed. Any trial can be
re-run alone and a sweep gives identical numbers on any number of threads.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from infrastructure.trial_pool import TrialPool
from service.errors import InvalidArgumentError
from service.solver_service import (
    DEFAULT_GAMMA,
    DEFAULT_MAX_ITERS,
    DEFAULT_RESIDUAL_TOL,
    Algorithm,
    SolverConfig,
    SolverResult,
    StopReason,
    run_solver,
)
from service.sparse_ops import IndexSet, Matrix, ProblemInstance, Vector

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
NEAR_CRITICAL_RATE = 0.99

BENCH_M = 200
BENCH_N = 1000
BENCH_TRIALS = 1000

BENCH_ALGORITHMS: Tuple[str, ...] = (
    "iht:1",
    "iad:1",
    "iht:0.333333",
    "iad:0.333333",
    "niht",
    "niad",
    "htp",
    "adp",
)

# (classical, alternating-direction) pairs compared by relative gain.
BENCH_PAIRS: Tuple[Tuple[str, str], ...] = (
    ("iht:1", "iad:1"),
    ("iht:0.333333", "iad:0.333333"),
    ("niht", "niad"),
    ("htp", "adp"),
)


class SignalKind(str, Enum):
    CARS = "cars"
    GAUSSIAN = "gaussian"


SPARSITY_RANGES: Dict[SignalKind, Tuple[int, int]] = {
    SignalKind.CARS: (1, 60),
    SignalKind.GAUSSIAN: (1, 100),
}

# Critical sparsity at 1000 trials per s, keyed like BENCH_ALGORITHMS.
REFERENCE_CRITICAL: Dict[SignalKind, Dict[str, int]] = {
    SignalKind.CARS: dict(zip(BENCH_ALGORITHMS, (10, 23, 10, 36, 28, 38, 29, 38))),
    SignalKind.GAUSSIAN: dict(zip(BENCH_ALGORITHMS, (7, 20, 24, 52, 45, 61, 45, 66))),
}


def parse_algorithm_tag(
    tag: str,
    gamma: float = DEFAULT_GAMMA,
    max_iters: int = DEFAULT_MAX_ITERS,
    residual_tol: float = DEFAULT_RESIDUAL_TOL,
) -> SolverConfig:
    """'iad:0.333333' -> IAD template with mu = 0.333333; s is filled in per sweep point."""
    name, _, mu_text = tag.strip().lower().partition(":")
    try:
        algorithm = Algorithm(name)
    except ValueError:
        raise InvalidArgumentError(f"unknown algorithm {name!r} in {tag!r}") from None
    mu = 1.0
    if mu_text:
        if not algorithm.uses_mu:
            raise InvalidArgumentError(f"{algorithm.value} takes no step-size suffix, got {tag!r}")
        try:
            mu = float(mu_text)
        except ValueError:
            raise InvalidArgumentError(f"bad step size in {tag!r}") from None
    return SolverConfig(
        algorithm=algorithm,
        s=1,
        mu=mu,
        gamma=gamma,
        max_iters=max_iters,
        residual_tol=residual_tol,
    )


@dataclass(frozen=True)
class ExperimentSpec:
    m: int = BENCH_M
    n: int = BENCH_N
    s_min: int = 1
    s_max: int = 60
    signal_kind: SignalKind = SignalKind.CARS
    trials_per_s: int = BENCH_TRIALS
    algorithms: Tuple[SolverConfig, ...] = ()
    master_seed: int = 0
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "signal_kind", SignalKind(self.signal_kind))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if self.m < 1 or self.n < 1:
            raise InvalidArgumentError(f"dimensions must be positive, got m={self.m} n={self.n}")
        if not 1 <= self.s_min <= self.s_max <= self.n:
            raise InvalidArgumentError(f"sparsity range [{self.s_min}, {self.s_max}] not inside [1, {self.n}]")
        if self.trials_per_s < 1:
            raise InvalidArgumentError(f"trials_per_s must be >= 1, got {self.trials_per_s}")
        if not 0 <= self.master_seed < 2**64:
            raise InvalidArgumentError(f"master_seed must be a 64-bit unsigned integer, got {self.master_seed}")
        if not (self.noise_std >= 0 and math.isfinite(self.noise_std)):
            raise InvalidArgumentError(f"noise_std must be nonnegative, got {self.noise_std}")
        tags = [c.tag for c in self.algorithms]
        if len(set(tags)) != len(tags):
            raise InvalidArgumentError(f"duplicate algorithm tags in {tags}")

    @property
    def sparsities(self) -> range:
        return range(self.s_min, self.s_max + 1)

    def metadata(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "s_min": self.s_min,
            "s_max": self.s_max,
            "signal_kind": self.signal_kind.value,
            "trials_per_s": self.trials_per_s,
            "algorithms": [c.tag for c in self.algorithms],
            "gamma": self.algorithms[0].gamma if self.algorithms else DEFAULT_GAMMA,
            "master_seed": self.master_seed,
            "noise_std": self.noise_std,
        }


@dataclass(frozen=True)
class TrialReport:
    algorithm: str
    s: int
    trial_index: int
    seed: int
    success: bool
    iterations_used: int
    stop_reason: StopReason

    @property
    def errored(self) -> bool:
        return self.stop_reason in (StopReason.SINGULAR_SYSTEM, StopReason.DEGENERATE_STEP)


@dataclass(frozen=True)
class CurvePoint:
    s: int
    trials: int
    successes: int
    errors: int = 0

    def __post_init__(self) -> None:
        if not 0 <= self.successes <= self.trials:
            raise InvalidArgumentError(f"successes {self.successes} outside [0, {self.trials}] at s={self.s}")
        if not 0 <= self.errors <= self.trials - self.successes:
            raise InvalidArgumentError(f"errors {self.errors} exceed failures at s={self.s}")

    @property
    def rate(self) -> float:
        return self.successes / self.trials if self.trials else 0.0


@dataclass
class Curve:
    algorithm: str
    points: List[CurvePoint] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.points = sorted(self.points, key=lambda p: p.s)
        seen = [p.s for p in self.points]
        if len(set(seen)) != len(seen):
            raise InvalidArgumentError(f"curve {self.algorithm} has repeated sparsity levels")

    @property
    def critical_sparsity(self) -> Optional[int]:
        return critical_sparsity(self)

    @property
    def near_critical_sparsity(self) -> Optional[int]:
        return critical_sparsity(self, min_rate=NEAR_CRITICAL_RATE)


# --- random instances ---------------------------------------------------------------


def derive_seed(master_seed: int, *parts: object) -> int:
    """Stable 64-bit seed for (master_seed, *parts), independent of PYTHONHASHSEED."""
    key = ":".join(str(p) for p in (master_seed, *parts)).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def trial_seed(master_seed: int, tag: str, s: int, trial_index: int) -> int:
    return derive_seed(master_seed, tag, s, trial_index)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def gen_gaussian_matrix(m: int, n: int, seed: int) -> Matrix:
    """m x n matrix with i.i.d. N(0, 1/m) entries."""
    if m < 1 or n < 1:
        raise InvalidArgumentError(f"dimensions must be positive, got {m}x{n}")
    return _rng(seed).standard_normal((m, n)) / math.sqrt(m)


def gen_sparse_signal(n: int, s: int, kind: SignalKind | str, seed: int) -> Tuple[Vector, IndexSet]:
    if not 1 <= s <= n:
        raise InvalidArgumentError(f"sparsity {s} outside [1, {n}]")
    kind = SignalKind(kind)
    rng = _rng(seed)
    supp = np.sort(rng.choice(n, size=s, replace=False)).astype(np.int64)
    if kind is SignalKind.CARS:
        values = rng.choice(np.array([-1.0, 1.0]), size=s)
    else:
        values = rng.standard_normal(s)
        zero = values == 0.0
        while np.any(zero):
            values[zero] = rng.standard_normal(int(zero.sum()))
            zero = values == 0.0
    x = np.zeros(n)
    x[supp] = values
    return x, supp


def build_problem(spec: ExperimentSpec, s: int, seed: int) -> ProblemInstance:
    A = gen_gaussian_matrix(spec.m, spec.n, derive_seed(seed, "matrix"))
    x, supp = gen_sparse_signal(spec.n, s, spec.signal_kind, derive_seed(seed, "signal"))
    b = A @ x
    noise = None
    if spec.noise_std > 0:
        noise = spec.noise_std * _rng(derive_seed(seed, "noise")).standard_normal(spec.m)
        b = b + noise
    return ProblemInstance(A=A, b=b, truth=x, true_support=supp, noise=noise)


# --- trials and curves --------------------------------------------------------------


def trial_success(result: SolverResult, true_support: IndexSet) -> bool:
    """Exact reconstruction means the recovered support equals the true one; residual size is irrelevant."""
    if result.error is not None:
        return False
    return bool(np.array_equal(result.support_final, true_support))


def run_trial(spec: ExperimentSpec, config: SolverConfig, s: int, trial_index: int) -> TrialReport:
    seed = trial_seed(spec.master_seed, config.tag, s, trial_index)
    problem = build_problem(spec, s, seed)
    result = run_solver(problem, replace(config, s=s))
    report = TrialReport(
        algorithm=config.tag,
        s=s,
        trial_index=trial_index,
        seed=seed,
        success=trial_success(result, problem.true_support),
        iterations_used=result.iterations_used,
        stop_reason=result.stop_reason,
    )
    logger.debug(
        "run_trial: %s s=%d trial=%d success=%s stop=%s k=%d",
        report.algorithm,
        s,
        trial_index,
        report.success,
        report.stop_reason.value,
        report.iterations_used,
    )
    return report


def _trial_indices(spec: ExperimentSpec, trial_range: Optional[range]) -> range:
    if trial_range is None:
        return range(spec.trials_per_s)
    if trial_range.step != 1 or trial_range.start < 0 or len(trial_range) == 0:
        raise InvalidArgumentError(f"trial range must be a non-empty contiguous range, got {trial_range}")
    return trial_range


def curve_point(spec: ExperimentSpec, config: SolverConfig, s: int, trial_range: Optional[range] = None) -> CurvePoint:
    successes = errors = 0
    indices = _trial_indices(spec, trial_range)
    for i in indices:
        report = run_trial(spec, config, s, i)
        successes += report.success
        errors += report.errored
    return CurvePoint(s=s, trials=len(indices), successes=successes, errors=errors)


def reconstruction_curve(spec: ExperimentSpec, config: SolverConfig, trial_range: Optional[range] = None) -> Curve:
    return Curve(config.tag, [curve_point(spec, config, s, trial_range) for s in spec.sparsities])


def merge_curves(a: Curve, b: Curve) -> Curve:
    """Pool the trials of two runs of the same algorithm, point by point."""
    if a.algorithm != b.algorithm:
        raise InvalidArgumentError(f"cannot merge curves of {a.algorithm} and {b.algorithm}")
    pooled: Dict[int, CurvePoint] = {p.s: p for p in a.points}
    for p in b.points:
        q = pooled.get(p.s)
        if q is None:
            pooled[p.s] = p
        else:
            pooled[p.s] = CurvePoint(p.s, q.trials + p.trials, q.successes + p.successes, q.errors + p.errors)
    return Curve(a.algorithm, list(pooled.values()))


def critical_sparsity(curve: Curve, min_rate: float = 1.0) -> Optional[int]:
    """Largest s whose rate, and the rate at every smaller s in the curve, is >= min_rate."""
    if not curve.points:
        raise InvalidArgumentError(f"curve {curve.algorithm} is empty")
    best: Optional[int] = None
    for point in curve.points:
        if point.rate < min_rate:
            break
        best = point.s
    return best


def near_critical_sparsity(curve: Curve) -> Optional[int]:
    return critical_sparsity(curve, min_rate=NEAR_CRITICAL_RATE)


def relative_gain(old: Optional[int], new: Optional[int]) -> Optional[float]:
    """(new - old) / old in percent; None when either side is missing or old is 0."""
    if old is None or new is None or old == 0:
        return None
    return (new - old) / old * 100.0


class ExperimentService:
    """Runs reconstruction sweeps, one pool task per (algorithm, s) point."""

    def __init__(self, pool: Optional[TrialPool] = None) -> None:
        self.pool = pool or TrialPool(threads=1)
        self._logger = logging.getLogger(__name__)

    def sweep(self, spec: ExperimentSpec, trial_range: Optional[range] = None) -> List[Curve]:
        if not spec.algorithms:
            raise InvalidArgumentError("experiment has no algorithms")
        indices = _trial_indices(spec, trial_range)
        jobs: List[Tuple[SolverConfig, int]] = [(c, s) for c in spec.algorithms for s in spec.sparsities]
        self._logger.info(
            "ExperimentService: %s sweep m=%d n=%d s=%d..%d trials=%d algorithms=%s seed=%d threads=%d",
            spec.signal_kind.value,
            spec.m,
            spec.n,
            spec.s_min,
            spec.s_max,
            len(indices),
            ",".join(c.tag for c in spec.algorithms),
            spec.master_seed,
            self.pool.threads,
        )

        tasks: List[Callable[[], Tuple[str, CurvePoint]]] = [
            (lambda c=c, s=s: (c.tag, curve_point(spec, c, s, indices))) for c, s in jobs
        ]
        results = self.pool.run(tasks)

        by_tag: Dict[str, List[CurvePoint]] = {c.tag: [] for c in spec.algorithms}
        for tag, point in results:
            by_tag[tag].append(point)
            if point.errors:
                self._logger.warning(
                    "ExperimentService: %s s=%d had %d/%d trials stop on a singular or degenerate step",
                    tag,
                    point.s,
                    point.errors,
                    point.trials,
                )
        curves = [Curve(tag, points) for tag, points in by_tag.items()]
        for curve in curves:
            self._logger.info(
                "ExperimentService: %s critical=%s near_critical=%s",
                curve.algorithm,
                curve.critical_sparsity,
                curve.near_critical_sparsity,
            )
        return curves

    def critical_table(
        self,
        curves: Iterable[Curve],
        pairs: Sequence[Tuple[str, str]] = BENCH_PAIRS,
        min_rate: float = 1.0,
    ) -> List[Tuple[str, str, Optional[int], Optional[int], Optional[float]]]:
        """(old, new, critical(old), critical(new), gain %) per pair; missing curves raise."""
        lookup = {c.algorithm: c for c in curves}
        rows = []
        for old, new in pairs:
            missing = [tag for tag in (old, new) if tag not in lookup]
            if missing:
                raise InvalidArgumentError(f"no curve for {', '.join(missing)}")
            c_old = critical_sparsity(lookup[old], min_rate)
            c_new = critical_sparsity(lookup[new], min_rate)
            rows.append((old, new, c_old, c_new, relative_gain(c_old, c_new)))
        return rows
