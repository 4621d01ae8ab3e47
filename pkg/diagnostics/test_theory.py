import math
import sys

import numpy as np
from scipy.linalg import hadamard

from diagnostics.harness import run_checks
from service.errors import DegenerateSpectrumError, InvalidArgumentError, PreconditionError, TooLargeError
from service.solver_service import Algorithm, SolverConfig, run_solver
from service.sparse_ops import ProblemInstance
from service.theory_service import (
    RecurrenceSpec,
    TheoryInputs,
    convergence_constants,
    convergence_criteria,
    error_bound,
    exact_rip_constant,
    memory_recursion_bound,
    memory_recursion_exact,
    memory_recursion_weights,
    spectrum,
    support_identification_iterations,
    support_recovery_iterations,
    unroll_recurrence,
    worst_case_error_chain,
)


def _raises(exc_type, fn, *args, **kwargs) -> BaseException:
    try:
        fn(*args, **kwargs)
    except exc_type as exc:
        return exc
    raise AssertionError(f"{getattr(fn, '__name__', fn)} did not raise {exc_type.__name__}")


def _recurse(c1, c2, c3, a, b1_init, k):
    value = b1_init
    for j in range(1, k + 1):
        value = c1 * value + c2 * a[j] + c3 * a[j - 1]
    return value


def _equality_sequence(spec: RecurrenceSpec, k_max: int):
    a = [0.0, spec.a1, spec.a2]
    for k in range(2, k_max + 1):
        memory = sum(spec.b ** (k - i) * a[i] for i in range(1, k))
        a.append(spec.b1 * a[k] + spec.b2 * memory + spec.b3 * spec.b**k + spec.b4)
    return a


def _random_inputs(rng: np.random.Generator) -> TheoryInputs:
    algorithm = (Algorithm.IAD, Algorithm.NIAD, Algorithm.ADP)[int(rng.integers(3))]
    return TheoryInputs(
        algorithm=algorithm,
        delta=float(rng.uniform(0.0, 0.9)),
        gamma=float(rng.uniform(0.05, 3.0)),
        mu=float(rng.uniform(0.2, 1.5)),
    )


def test_unroll_examples() -> None:
    for k in (1, 2, 5, 17):
        assert unroll_recurrence(1.0, 1.0, 0.0, [1.0] * (k + 1), 0.0, k) == k
        assert math.isclose(unroll_recurrence(0.5, 0.0, 0.0, [3.0] * (k + 1), 1.0, k), 0.5**k, rel_tol=1e-15)
    _raises(InvalidArgumentError, unroll_recurrence, 1.0, 1.0, 1.0, [1.0, 1.0], 0.0, 0)
    _raises(InvalidArgumentError, unroll_recurrence, 1.0, 1.0, 1.0, [1.0, 1.0], 0.0, 3)


def test_unroll_matches_literal_recursion() -> None:
    rng = np.random.default_rng(0)
    for _ in range(200):
        c1, c2, c3 = rng.uniform(0.0, 1.0, size=3)
        k = int(rng.integers(1, 21))
        a = rng.uniform(0.0, 1.0, size=k + 1).tolist()
        b1_init = float(rng.uniform(0.0, 1.0))
        got = unroll_recurrence(c1, c2, c3, a, b1_init, k)
        assert math.isclose(got, _recurse(c1, c2, c3, a, b1_init, k), rel_tol=1e-12), k

    # vector series are handled componentwise
    a = [rng.uniform(0.0, 1.0, size=3) for _ in range(6)]
    b1_init = rng.uniform(0.0, 1.0, size=3)
    got = unroll_recurrence(0.4, 0.3, 0.2, a, b1_init, 5)
    for j in range(3):
        expected = _recurse(0.4, 0.3, 0.2, [x[j] for x in a], b1_init[j], 5)
        assert math.isclose(got[j], expected, rel_tol=1e-12)


def test_memory_recursion_without_memory_terms() -> None:
    spec = RecurrenceSpec(b=0.3, b1=0.6, b2=0.0, b3=0.0, b4=0.0, a1=0.7, a2=2.0)
    sp = spectrum(0.3, 0.6, 0.0)
    assert math.isclose(sp.lam1, 0.6) and math.isclose(sp.lam2, 0.3)
    for k in range(2, 12):
        assert math.isclose(memory_recursion_bound(spec, k), 0.6 ** (k - 1) * 2.0, rel_tol=1e-12), k


def test_memory_recursion_matches_equality_recursion() -> None:
    rng = np.random.default_rng(1)
    accepted = 0
    while accepted < 100:
        b, b1, b2 = rng.uniform(0.1, 0.9), rng.uniform(0.0, 0.9), rng.uniform(0.05, 0.5)
        if (1.0 - b) * (1.0 - b1) <= b * b2:
            continue
        accepted += 1
        b3, b4, a1, a2 = rng.uniform(0.0, 1.0, size=4)
        spec = RecurrenceSpec(b=b, b1=b1, b2=b2, b3=b3, b4=b4, a1=a1, a2=a2)
        seq = _equality_sequence(spec, 30)
        for k in range(2, 30):
            exact, bound = memory_recursion_exact(spec, k), memory_recursion_bound(spec, k)
            assert abs(exact - seq[k + 1]) <= 1e-9 * seq[k + 1], (b, b1, b2, k)
            assert bound >= seq[k + 1] * (1.0 - 1e-9)
            slack = memory_recursion_weights(b, b1, b2, k).on_a1 * (1.0 - b) * a1
            assert abs((bound - exact) - slack) <= 1e-9 * max(1.0, bound)


def test_memory_recursion_bound_decays_to_zero() -> None:
    spec = RecurrenceSpec(b=0.5, b1=0.3, b2=0.2, b3=1.0, b4=0.0, a1=1.0, a2=1.0)
    values = [memory_recursion_bound(spec, k) for k in range(2, 201)]
    tail = values[48:]
    assert all(later < earlier for earlier, later in zip(tail, tail[1:]))
    assert values[-1] < 1e-6
    _raises(DegenerateSpectrumError, spectrum, 0.5, 0.5, 0.0)
    _raises(InvalidArgumentError, RecurrenceSpec, b=0.0, b1=0.1, b2=0.1, b3=0.0, b4=0.0, a1=1.0, a2=1.0)


def test_convergence_constants_hand_example() -> None:
    bounds = convergence_constants(TheoryInputs(algorithm=Algorithm.IAD, delta=0.0, gamma=1.0, mu=1.0))
    assert bounds.b1 == 0.0 and bounds.b2 == 0.0
    assert bounds.b == 0.5
    assert math.isclose(bounds.lam1, 0.5) and abs(bounds.lam2) < 1e-15
    assert math.isclose(bounds.rho, 2.0 / math.sqrt(3.0))
    assert bounds.converges and bounds.c is not None
    _raises(InvalidArgumentError, TheoryInputs, algorithm=Algorithm.IAD, delta=1.0, gamma=1.0)
    _raises(InvalidArgumentError, TheoryInputs, algorithm=Algorithm.IHT, delta=0.1, gamma=1.0)


def test_roots_solve_characteristic_polynomial() -> None:
    rng = np.random.default_rng(2)
    for _ in range(200):
        bounds = convergence_constants(_random_inputs(rng))
        b, b1, b2 = bounds.b, bounds.b1, bounds.b2
        assert bounds.lam1 >= bounds.lam2
        for lam in (bounds.lam1, bounds.lam2):
            res = lam * lam - (b + b1) * lam + b * b1 - b * b2
            scale = max(1.0, lam * lam, (b + b1) * abs(lam), b * b1 + b * b2)
            assert abs(res) <= 1e-12 * scale
        assert math.isclose(bounds.lam1 + bounds.lam2, b + b1, rel_tol=1e-12, abs_tol=1e-14)
        assert math.isclose(bounds.lam1 * bounds.lam2, b * b1 - b * b2, rel_tol=1e-9, abs_tol=1e-12)


def test_convergence_criteria_agree() -> None:
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 1000:
        inputs = _random_inputs(rng)
        bounds = convergence_constants(inputs)
        if abs(bounds.rho - abs(1.0 - inputs.gamma) / inputs.gamma) <= 1e-9:
            continue
        checked += 1
        criteria = convergence_criteria(inputs)
        assert criteria.agree, (inputs, criteria)
        assert criteria.rho_test == bounds.converges
        if bounds.converges:
            assert bounds.lam1 < 1.0 and bounds.lam2 < 1.0 and 0.0 < bounds.b < 1.0


def _boundary(algorithm: Algorithm) -> float:
    lo, hi = 0.0, 0.99
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if convergence_constants(TheoryInputs(algorithm=algorithm, delta=mid, gamma=1.0)).converges:
            lo = mid
        else:
            hi = mid
    return lo


def test_convergence_boundaries_at_unit_gamma() -> None:
    assert abs(_boundary(Algorithm.NIAD) - (2.0 * math.sqrt(3.0) - 1.0) / 11.0) < 1e-3
    assert abs(_boundary(Algorithm.ADP) - math.sqrt(3.0) / 3.0) < 1e-3


def test_error_bound_trivial_and_decay() -> None:
    inputs = TheoryInputs(algorithm=Algorithm.IAD, delta=0.1, gamma=0.8, mu=1.0)
    assert error_bound(inputs, 5, 0.0, 0.0) == 0.0
    bounds = convergence_constants(inputs)
    ratio = error_bound(inputs, 151, 1.0, 0.0) / error_bound(inputs, 150, 1.0, 0.0)
    assert math.isclose(ratio, bounds.rate, rel_tol=1e-6)
    _raises(InvalidArgumentError, error_bound, inputs, 5, -1.0, 0.0)


def test_error_bound_dominates_worst_case_chain() -> None:
    inputs = TheoryInputs(algorithm=Algorithm.IAD, delta=0.1, gamma=0.8, mu=1.0)
    chain = worst_case_error_chain(inputs, 1.0, 0.1, 60)
    assert len(chain) == 61
    bounds = convergence_constants(inputs)
    for k in range(2, 60):
        bound = error_bound(inputs, k, 1.0, 0.1)
        assert bound >= chain[k + 1] * (1.0 - 1e-9), k
        slack = memory_recursion_weights(bounds.b, bounds.b1, bounds.b2, k).on_a1 * (1.0 - bounds.b) * chain[1]
        assert abs((bound - chain[k + 1]) - slack) <= 1e-9 * max(1.0, bound), k


def test_non_convergent_inputs_are_rejected() -> None:
    inputs = TheoryInputs(algorithm=Algorithm.IAD, delta=0.5, gamma=0.5, mu=1.0)
    bounds = convergence_constants(inputs)
    assert not bounds.converges and bounds.c is None
    _raises(PreconditionError, error_bound, inputs, 3, 1.0, 0.0)
    _raises(PreconditionError, worst_case_error_chain, inputs, 1.0, 0.0, 10)
    _raises(PreconditionError, support_recovery_iterations, 1.0, 1.0, bounds)


def test_support_identification_count() -> None:
    assert support_identification_iterations(1.0, 1.0, 1.0, 0.5) == 3
    assert support_identification_iterations(0.5, 1.0, 1.0, 0.5) == 4
    _raises(PreconditionError, support_identification_iterations, 1.0, 1.0, 0.0, 0.5)
    _raises(PreconditionError, support_identification_iterations, 1.0, 1.0, 1.0, 1.0)
    _raises(InvalidArgumentError, support_identification_iterations, 0.0, 1.0, 1.0, 0.5)


def test_support_count_holds_end_to_end() -> None:
    A = np.hstack([np.eye(16), hadamard(16) / 4.0])
    delta = exact_rip_constant(A, 3)
    assert math.isclose(delta, math.sqrt(2.0) / 4.0, rel_tol=1e-9)

    bounds = convergence_constants(TheoryInputs(algorithm=Algorithm.IAD, delta=delta, gamma=1.0, mu=1.0))
    assert bounds.converges
    count = support_recovery_iterations(1.0, 1.0, bounds)
    assert count == 5

    truth = np.zeros(32)
    truth[20] = 1.0
    problem = ProblemInstance(A=A, b=A @ truth, truth=truth)
    cfg = SolverConfig(algorithm=Algorithm.IAD, s=1, mu=1.0, gamma=1.0, max_iters=count, residual_tol=0.0)
    result = run_solver(problem, cfg)
    assert result.support_hit_iteration is not None
    assert result.support_hit_iteration <= count
    assert result.support_final.tolist() == [20]


def test_rip_constant_examples() -> None:
    rng = np.random.default_rng(4)
    q, _ = np.linalg.qr(rng.standard_normal((10, 6)))
    for s in (1, 3, 6):
        assert exact_rip_constant(q, s) < 1e-12
    assert abs(exact_rip_constant(np.array([[1.0, 1.0], [0.0, 0.0]]), 2) - 1.0) < 1e-12
    _raises(TooLargeError, exact_rip_constant, rng.standard_normal((4, 40)), 20)
    _raises(InvalidArgumentError, exact_rip_constant, q, 0)


def test_rip_constant_monotone_and_invariant() -> None:
    rng = np.random.default_rng(5)
    for _ in range(20):
        A = rng.standard_normal((8, 12)) / np.sqrt(8)
        deltas = [exact_rip_constant(A, s) for s in range(1, 6)]
        assert all(lo <= hi + 1e-12 for lo, hi in zip(deltas, deltas[1:]))

    A = rng.standard_normal((6, 10)) / np.sqrt(6)
    base = exact_rip_constant(A, 3)
    signs = rng.choice([-1.0, 1.0], size=10)
    assert abs(exact_rip_constant(A[:, rng.permutation(10)], 3) - base) < 1e-12
    assert abs(exact_rip_constant(A * signs, 3) - base) < 1e-12


def main() -> None:
    ok = run_checks(
        [
            ("unroll examples", test_unroll_examples),
            ("unroll = recursion", test_unroll_matches_literal_recursion),
            ("recursion bound without memory", test_memory_recursion_without_memory_terms),
            ("recursion bound = recursion", test_memory_recursion_matches_equality_recursion),
            ("recursion bound decay", test_memory_recursion_bound_decays_to_zero),
            ("constants hand example", test_convergence_constants_hand_example),
            ("characteristic polynomial", test_roots_solve_characteristic_polynomial),
            ("convergence criteria", test_convergence_criteria_agree),
            ("convergence boundaries", test_convergence_boundaries_at_unit_gamma),
            ("error bound decay", test_error_bound_trivial_and_decay),
            ("error bound dominance", test_error_bound_dominates_worst_case_chain),
            ("non-convergent inputs", test_non_convergent_inputs_are_rejected),
            ("support count", test_support_identification_count),
            ("support count end to end", test_support_count_holds_end_to_end),
            ("RIP examples", test_rip_constant_examples),
            ("RIP monotone/invariant", test_rip_constant_monotone_and_invariant),
        ]
    )
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
