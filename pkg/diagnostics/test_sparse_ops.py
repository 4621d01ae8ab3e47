import itertools
import sys

import numpy as np

from diagnostics.harness import run_checks
from service.errors import InvalidArgumentError, SingularSystemError
from service.sparse_ops import (
    ProblemInstance,
    gradient,
    hard_threshold_by_value,
    hard_threshold_top_s,
    least_squares_on_support,
    relative_residual,
    residual,
    support,
    top_s_indices,
    top_s_margin,
)


def _raises(exc_type, fn, *args, **kwargs) -> BaseException:
    try:
        fn(*args, **kwargs)
    except exc_type as exc:
        return exc
    raise AssertionError(f"{getattr(fn, '__name__', fn)} did not raise {exc_type.__name__}")


def test_hard_threshold_by_value_keeps_strictly_larger() -> None:
    out = hard_threshold_by_value([3.0, -0.5, 2.0, -4.0], 2.0)
    assert out.tolist() == [3.0, 0.0, 0.0, -4.0]
    assert hard_threshold_by_value([1.0, -1.0], 0.0).tolist() == [1.0, -1.0]
    _raises(InvalidArgumentError, hard_threshold_by_value, [1.0], -0.1)


def test_hard_threshold_top_s() -> None:
    assert hard_threshold_top_s([1.0, -3.0, 2.0, 0.5], 2).tolist() == [0.0, -3.0, 2.0, 0.0]
    assert hard_threshold_top_s([1.0, 2.0], 0).tolist() == [0.0, 0.0]
    assert hard_threshold_top_s([1.0, -2.0, 3.0], 3).tolist() == [1.0, -2.0, 3.0]
    _raises(InvalidArgumentError, hard_threshold_top_s, [1.0, 2.0], 3)


def test_top_s_ties_go_to_lower_index() -> None:
    assert top_s_indices([1.0, -1.0, 1.0], 1).tolist() == [0]
    assert top_s_indices([0.5, 2.0, -2.0, 2.0], 2).tolist() == [1, 2]
    assert hard_threshold_top_s([-1.0, 1.0, 1.0], 2).tolist() == [-1.0, 1.0, 0.0]


def test_top_s_is_the_best_s_term_approximation() -> None:
    rng = np.random.default_rng(21)
    for trial in range(40):
        n = int(rng.integers(1, 9))
        x = rng.standard_normal(n)
        if trial % 4 == 0:
            x[rng.integers(0, n)] = 0.0
        for s in range(n + 1):
            y = hard_threshold_top_s(x, s)
            kept = support(y)
            assert kept.size <= s
            assert np.array_equal(y[kept], x[kept])
            best = max(float(np.sum(x[list(T)] ** 2)) for T in itertools.combinations(range(n), s))
            assert float(np.sum(y**2)) >= best - 1e-12, (x, s)
            assert np.array_equal(hard_threshold_top_s(y, s), y)


def test_top_s_margin() -> None:
    assert top_s_margin([3.0, 1.0, 2.0], 1) == 1.0
    assert top_s_margin([3.0, 1.0, 2.0], 3) == float("inf")
    assert top_s_margin([1.0, 1.0, 0.0], 1) == 0.0


def test_residual_and_gradient() -> None:
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    x = np.array([1.0, 1.0])
    b = np.array([1.0, 1.0])
    assert residual(A, x, b).tolist() == [-2.0, -6.0]
    assert gradient(A, x, b).tolist() == [20.0, 28.0]
    assert relative_residual(A, x, np.zeros(2)) == 0.0
    assert abs(relative_residual(A, x, b) - np.sqrt(40.0) / np.sqrt(2.0)) < 1e-12
    _raises(InvalidArgumentError, residual, A, np.ones(3), b)


def test_gradient_matches_central_differences() -> None:
    rng = np.random.default_rng(5)
    h = 1e-6

    def f(A: np.ndarray, x: np.ndarray, b: np.ndarray) -> float:
        return 0.5 * float(np.sum((A @ x - b) ** 2))

    for _ in range(25):
        A = rng.standard_normal((5, 8))
        b = rng.standard_normal(5)
        x = rng.standard_normal(8)
        g = gradient(A, x, b)
        fd = np.array([(f(A, x + h * e, b) - f(A, x - h * e, b)) / (2 * h) for e in np.eye(8)])
        assert np.linalg.norm(fd - g) <= 1e-6 * max(1.0, float(np.linalg.norm(g)))


def test_support() -> None:
    assert support([0.0, 1e-300, 0.0, -2.0]).tolist() == [1, 3]
    assert support(np.zeros(4)).size == 0


def test_least_squares_on_support_matches_lstsq() -> None:
    rng = np.random.default_rng(11)
    A = rng.standard_normal((12, 20))
    b = rng.standard_normal(12)
    S = [2, 5, 11, 17]
    z = least_squares_on_support(A, b, S)
    ref, *_ = np.linalg.lstsq(A[:, S], b, rcond=None)
    assert np.allclose(z[S], ref, atol=1e-10)
    assert np.count_nonzero(np.delete(z, S)) == 0

    eye = least_squares_on_support(np.eye(3), [1.0, 2.0, 3.0], [0, 2])
    assert np.allclose(eye, [1.0, 0.0, 3.0])
    assert least_squares_on_support(A, b, []).tolist() == [0.0] * 20


def test_least_squares_residual_is_orthogonal_to_the_support() -> None:
    rng = np.random.default_rng(17)
    for _ in range(20):
        A = rng.standard_normal((20, 40))
        b = rng.standard_normal(20)
        S = np.sort(rng.choice(40, size=6, replace=False))
        z = least_squares_on_support(A, b, S)
        A_S = A[:, S]
        gap = np.linalg.norm(A_S.T @ (b - A @ z))
        assert gap <= 1e-10 * np.linalg.norm(A_S, 2) * np.linalg.norm(b)

    truth = np.zeros(40)
    truth[S] = rng.standard_normal(6)
    assert np.allclose(least_squares_on_support(A, A @ truth, S), truth, atol=1e-10)


def test_least_squares_on_support_singular() -> None:
    A = np.array([[1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    exc = _raises(SingularSystemError, least_squares_on_support, A, [1.0, 1.0], [0, 1])
    assert exc.support == [0, 1]
    # more columns than rows
    rng = np.random.default_rng(3)
    _raises(SingularSystemError, least_squares_on_support, rng.standard_normal((3, 8)), np.ones(3), [0, 1, 2, 3])
    _raises(InvalidArgumentError, least_squares_on_support, A, [1.0, 1.0], [5])


def test_problem_instance_validation() -> None:
    A = np.eye(3, 4)
    truth = np.array([0.0, 2.0, 0.0, -1.0])
    p = ProblemInstance(A=A, b=A @ truth, truth=truth)
    assert p.m == 3 and p.n == 4
    assert p.true_support.tolist() == [1, 3]
    _raises(InvalidArgumentError, ProblemInstance, A=A, b=np.ones(4))
    _raises(InvalidArgumentError, ProblemInstance, A=A, b=A @ truth, truth=truth, true_support=[1])
    _raises(InvalidArgumentError, ProblemInstance, A=np.array([[np.nan]]), b=[1.0])


def main() -> None:
    ok = run_checks(
        [
            ("hard threshold by value", test_hard_threshold_by_value_keeps_strictly_larger),
            ("H_s", test_hard_threshold_top_s),
            ("H_s ties", test_top_s_ties_go_to_lower_index),
            ("H_s optimal and idempotent", test_top_s_is_the_best_s_term_approximation),
            ("top-s margin", test_top_s_margin),
            ("residual/gradient", test_residual_and_gradient),
            ("gradient vs finite differences", test_gradient_matches_central_differences),
            ("support", test_support),
            ("least squares", test_least_squares_on_support_matches_lstsq),
            ("least squares orthogonality", test_least_squares_residual_is_orthogonal_to_the_support),
            ("least squares singular", test_least_squares_on_support_singular),
            ("problem instance", test_problem_instance_validation),
        ]
    )
    sys.exit(0 if ok else 1)


if __name__ == "__main__":
    main()
