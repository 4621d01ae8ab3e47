"""Command-line entry point: python -m app.main <subcommand> [flags].

Exit codes: 0 ran to completion, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from infrastructure.report_writer import FORMATS, ReportError, emit_report, load_report
from infrastructure.settings import ConfigFileError, configure_logging, load_environment, read_config_file
from infrastructure.trial_pool import TrialPool, resolve_thread_count
from service.admm_reference import AdmmParams, check_iad_recursion, check_unrolled_equivalence
from service.errors import InvalidArgumentError, SparseRecoveryError
from service.experiment_service import (
    NEAR_CRITICAL_RATE,
    BENCH_ALGORITHMS,
    BENCH_M,
    BENCH_N,
    BENCH_PAIRS,
    BENCH_TRIALS,
    SPARSITY_RANGES,
    Curve,
    ExperimentService,
    ExperimentSpec,
    SignalKind,
    build_problem,
    critical_sparsity,
    derive_seed,
    gen_gaussian_matrix,
    parse_algorithm_tag,
    relative_gain,
    trial_success,
)
from service.solver_service import DEFAULT_GAMMA, DEFAULT_MAX_ITERS, DEFAULT_RESIDUAL_TOL, Algorithm, SolverConfig, SolverService
from service.sparse_ops import ProblemInstance
from service.theory_service import (
    TheoryInputs,
    convergence_constants,
    convergence_criteria,
    error_bound,
    support_recovery_iterations,
)

logger = logging.getLogger("app.main")

EQUIVALENCE_TOL = 1e-8


def _json_default(value):  # noqa: ANN001
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def _dump(doc: dict) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")


def _progress(result: object, done: int, total: int) -> None:
    tag, point = result
    print(f"{tag} {point.s} {done}/{total}", file=sys.stderr, flush=True)


# --- solve --------------------------------------------------------------------------


def cmd_solve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.algorithm is None or args.s is None:
        parser.error("--algorithm and --s are required")
    if args.s < 1:
        parser.error(f"--s must be >= 1, got {args.s}")
    try:
        config = SolverConfig(
            algorithm=Algorithm(args.algorithm),
            s=args.s,
            mu=args.mu,
            gamma=args.gamma,
            max_iters=args.max_iters,
            residual_tol=args.tol,
        )
        spec = ExperimentSpec(
            m=args.m,
            n=args.n,
            s_min=args.s,
            s_max=args.s,
            signal_kind=SignalKind(args.signal),
            trials_per_s=1,
            master_seed=args.seed,
            noise_std=args.noise_std,
        )
    except InvalidArgumentError as exc:
        parser.error(str(exc))

    problem = build_problem(spec, args.s, derive_seed(args.seed, "solve"))
    result = SolverService().solve(problem, config)
    _dump(
        {
            "algorithm": config.tag,
            "m": args.m,
            "n": args.n,
            "s": args.s,
            "seed": args.seed,
            "success": trial_success(result, problem.true_support),
            "support_final": result.support_final,
            "true_support": problem.true_support,
            "iterations_used": result.iterations_used,
            "stop_reason": result.stop_reason.value,
            "final_relative_residual": result.relative_residual_history[-1],
            "final_error": result.error_history[-1] if result.error_history else None,
            "support_hit_iteration": result.support_hit_iteration,
            "error": result.error,
        }
    )
    return 1 if result.error else 0


# --- curve / critical ---------------------------------------------------------------


def _sweep_spec(args: argparse.Namespace, parser: argparse.ArgumentParser) -> ExperimentSpec:
    kind = SignalKind(args.signal)
    lo, hi = SPARSITY_RANGES[kind]
    s_min = lo if args.s_min is None else args.s_min
    s_max = hi if args.s_max is None else args.s_max
    try:
        templates = tuple(
            parse_algorithm_tag(tag, gamma=args.gamma, max_iters=args.max_iters, residual_tol=args.tol)
            for tag in args.algorithms.split(",")
            if tag.strip()
        )
        if not templates:
            raise InvalidArgumentError("--algorithms is empty")
        return ExperimentSpec(
            m=args.m,
            n=args.n,
            s_min=s_min,
            s_max=s_max,
            signal_kind=kind,
            trials_per_s=args.trials,
            algorithms=templates,
            master_seed=args.seed,
            noise_std=args.noise_std,
        )
    except InvalidArgumentError as exc:
        parser.error(str(exc))


def _trial_range(args: argparse.Namespace, parser: argparse.ArgumentParser) -> Optional[range]:
    if args.trial_start < 0:
        parser.error(f"--trial-start must be >= 0, got {args.trial_start}")
    if args.trial_start == 0:
        return None
    return range(args.trial_start, args.trial_start + args.trials)


def _run_sweep(args: argparse.Namespace, parser: argparse.ArgumentParser) -> Tuple[ExperimentSpec, List[Curve]]:
    spec = _sweep_spec(args, parser)
    trial_range = _trial_range(args, parser)
    try:
        threads = resolve_thread_count(args.threads)
    except ValueError as exc:
        parser.error(str(exc))
    service = ExperimentService(TrialPool(threads=threads, on_done=_progress))
    return spec, service.sweep(spec, trial_range)


def _report_format(args: argparse.Namespace) -> str:
    if args.format:
        return args.format
    return "json" if Path(args.out).suffix.lower() == ".json" else "csv"


def _check_writable(out: str) -> None:
    directory = Path(out).parent
    if not directory.is_dir():
        raise ReportError(f"cannot write report {out}: directory {directory} does not exist")
    if not os.access(directory, os.W_OK):
        raise ReportError(f"cannot write report {out}: directory {directory} is not writable")


def cmd_curve(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if not args.out:
        parser.error("--out is required")
    fmt = _report_format(args)
    _check_writable(args.out)
    spec, curves = _run_sweep(args, parser)
    emit_report(curves, args.out, fmt, spec)
    return 0


def _parse_pairs(text: str, parser: argparse.ArgumentParser) -> List[Tuple[str, str]]:
    pairs = []
    for item in text.split(","):
        if not item.strip():
            continue
        old, sep, new = item.partition("=")
        if not sep or not old.strip() or not new.strip():
            parser.error(f"--pairs entries look like old=new, got {item!r}")
        pairs.append((old.strip(), new.strip()))
    return pairs


def _fmt_count(value: Optional[int]) -> str:
    return "-" if value is None else str(value)


def cmd_critical(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    pairs = _parse_pairs(args.pairs, parser) if args.pairs else list(BENCH_PAIRS)
    if args.report:
        curves = load_report(args.report)
    else:
        if args.out:
            _check_writable(args.out)
        spec, curves = _run_sweep(args, parser)
        if args.out:
            emit_report(curves, args.out, _report_format(args), spec)

    lookup: Dict[str, Curve] = {c.algorithm: c for c in curves}
    missing = sorted({tag for pair in pairs for tag in pair if tag not in lookup})
    if missing:
        raise InvalidArgumentError(f"no curve for {', '.join(missing)}")

    min_rate = NEAR_CRITICAL_RATE if args.near else 1.0
    print(f"{'algorithm':<16}{'critical':>10}{'rate>=0.99':>12}")
    for curve in curves:
        print(f"{curve.algorithm:<16}{_fmt_count(curve.critical_sparsity):>10}{_fmt_count(curve.near_critical_sparsity):>12}")
    print()
    label = "rate>=0.99" if args.near else "critical"
    print(f"relative gain ({label})")
    for old, new in pairs:
        c_old = critical_sparsity(lookup[old], min_rate)
        c_new = critical_sparsity(lookup[new], min_rate)
        gain = relative_gain(c_old, c_new)
        text = "n/a" if gain is None else f"{gain:.1f}%"
        print(f"{old} -> {new}: {_fmt_count(c_old)} -> {_fmt_count(c_new)}  {text}")
    return 0


# --- equivalence ----------------------------------------------------------------------


def _equivalence_instance(m: int, n: int, seed: int) -> Tuple[ProblemInstance, np.ndarray]:
    A = gen_gaussian_matrix(m, n, derive_seed(seed, "matrix"))
    rng = np.random.Generator(np.random.Philox(key=derive_seed(seed, "signal")))
    s = max(1, n // 10)
    truth = np.zeros(n)
    truth[rng.choice(n, size=s, replace=False)] = 3.0 * rng.standard_normal(s)
    x0 = rng.standard_normal(n)
    return ProblemInstance(A=A, b=A @ truth), x0


def cmd_equivalence(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.instances < 1:
        parser.error(f"--instances must be >= 1, got {args.instances}")
    if args.iters < 2:
        parser.error(f"--iters must be >= 2, got {args.iters}")
    if args.m < 1 or args.n < 1:
        parser.error(f"dimensions must be positive, got {args.m}x{args.n}")
    try:
        params = AdmmParams(alpha=args.alpha, beta=args.beta, tau=args.tau)
        iad = SolverConfig(algorithm=Algorithm.IAD, s=max(1, args.n // 10), mu=1.0, gamma=params.gamma)
    except InvalidArgumentError as exc:
        parser.error(str(exc))

    failed = boundary = 0
    for i in range(args.instances):
        problem, x0 = _equivalence_instance(args.m, args.n, derive_seed(args.seed, "equivalence", i))
        unrolled = check_unrolled_equivalence(problem, params, x0, args.iters)
        recursion = check_iad_recursion(problem, iad, args.iters, x0)
        flagged = unrolled.boundary_inconclusive or recursion.boundary_inconclusive
        ok = unrolled.passed(EQUIVALENCE_TOL) and recursion.passed(EQUIVALENCE_TOL)
        boundary += flagged
        failed += not ok
        print(
            f"instance {i}: unrolled max_dev={unrolled.max_deviation:.3e} "
            f"recursion max_dev={recursion.max_deviation:.3e}"
            + (" boundary-inconclusive" if flagged else "")
        )
    verdict = "PASS" if failed == 0 else "FAIL"
    print(f"{verdict}: {args.instances - failed}/{args.instances} within {EQUIVALENCE_TOL:g}, {boundary} boundary-inconclusive")
    return 0 if failed == 0 else 1


# --- theory -------------------------------------------------------------------------------


def cmd_theory(args: argparse.Namespace, parser: argparse.ArgumentParser) -> int:
    if args.algorithm is None or args.delta3s is None:
        parser.error("--algorithm and --delta3s are required")
    try:
        inputs = TheoryInputs(algorithm=Algorithm(args.algorithm), delta=args.delta3s, gamma=args.gamma, mu=args.mu)
    except InvalidArgumentError as exc:
        parser.error(str(exc))
    if args.k is not None and args.k < 2:
        parser.error(f"--k must be >= 2, got {args.k}")
    for name in ("x0_err", "noise", "x_min"):
        value = getattr(args, name)
        if value is not None and value < 0:
            parser.error(f"--{name.replace('_', '-')} must be nonnegative, got {value}")

    k = args.k if args.k is not None else 2
    bounds = convergence_constants(inputs, k)
    criteria = convergence_criteria(inputs)
    doc = {
        "algorithm": inputs.algorithm.value,
        "delta3s": inputs.delta,
        "gamma": inputs.gamma,
        "mu": inputs.mu if inputs.algorithm is Algorithm.IAD else None,
        "k": k,
        "rho": bounds.rho,
        "threshold": abs(1.0 - inputs.gamma) / inputs.gamma,
        "converges": bounds.converges,
        "criteria": {
            "rho": criteria.rho_test,
            "spectral": criteria.spectral_test,
            "recurrence": criteria.recurrence_test,
        },
        "b": bounds.b,
        "b1": bounds.b1,
        "b2": bounds.b2,
        "b5": bounds.b5,
        "b6": bounds.b6,
        "b7": bounds.b7,
        "b8": bounds.b8,
        "b9": bounds.b9,
        "lambda1": bounds.lam1,
        "lambda2": bounds.lam2,
        "omega1": bounds.omega1,
        "omega2": bounds.omega2,
        "theta": dict(zip(("theta11", "theta12", "theta21", "theta22"), bounds.theta)),
        "c": dict(zip(("c1", "c2", "c3", "c4", "c5", "c6", "c7"), bounds.c)) if bounds.c else None,
    }
    if args.x0_err is not None and args.k is not None:
        doc["error_bound"] = error_bound(inputs, k, args.x0_err, args.noise or 0.0)
    if args.x0_err is not None and args.x_min is not None:
        doc["support_iterations"] = support_recovery_iterations(args.x_min, args.x0_err, convergence_constants(inputs))
    _dump(doc)
    return 0


# --- parser ---------------------------------------------------------------------------


def _add_config(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="KEY=VALUE file whose keys mirror these flags (flags win)")


def _add_sweep_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--algorithms", default=",".join(BENCH_ALGORITHMS), help="comma list, IHT/IAD take a step suffix like iad:0.333333 (default: %(default)s)")
    p.add_argument("--signal", choices=[k.value for k in SignalKind], default=SignalKind.CARS.value, help="nonzero distribution (default: %(default)s)")
    p.add_argument("--s-min", type=int, default=None, help="default: 1")
    p.add_argument("--s-max", type=int, default=None, help="default: 60 for cars, 100 for gaussian")
    p.add_argument("--trials", type=int, default=BENCH_TRIALS, help="trials per sparsity (default: %(default)s)")
    p.add_argument("--trial-start", type=int, default=0, help="first trial index, for split runs (default: %(default)s)")
    p.add_argument("--m", type=int, default=BENCH_M, help="measurements (default: %(default)s)")
    p.add_argument("--n", type=int, default=BENCH_N, help="signal length (default: %(default)s)")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="memory weight (default: %(default)s)")
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS, help="default: %(default)s")
    p.add_argument("--tol", type=float, default=DEFAULT_RESIDUAL_TOL, help="relative residual stop (default: %(default)s)")
    p.add_argument("--noise-std", type=float, default=0.0, help="measurement noise level (default: %(default)s)")
    p.add_argument("--seed", type=int, default=0, help="master seed (default: %(default)s)")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: SPARSE_BENCH_THREADS or CPU count)")
    p.add_argument("--format", choices=FORMATS, default=None, help="report format (default: from --out suffix, else csv)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparse-bench", description="Alternating-direction hard-thresholding solvers and benchmarks")
    parser.add_argument("--log-level", default=None, help="default: SPARSE_BENCH_LOG_LEVEL or INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run one solver on one seeded instance")
    p.add_argument("--algorithm", choices=[a.value for a in Algorithm], default=None, help="required")
    p.add_argument("--m", type=int, default=BENCH_M, help="default: %(default)s")
    p.add_argument("--n", type=int, default=BENCH_N, help="default: %(default)s")
    p.add_argument("--s", type=int, default=None, help="sparsity level, >= 1 (required)")
    p.add_argument("--mu", type=float, default=1.0, help="step size for iht/iad (default: %(default)s)")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="default: %(default)s")
    p.add_argument("--signal", choices=[k.value for k in SignalKind], default=SignalKind.CARS.value, help="default: %(default)s")
    p.add_argument("--noise-std", type=float, default=0.0, help="default: %(default)s")
    p.add_argument("--seed", type=int, default=0, help="default: %(default)s")
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERS, help="default: %(default)s")
    p.add_argument("--tol", type=float, default=DEFAULT_RESIDUAL_TOL, help="default: %(default)s")
    _add_config(p)
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("curve", help="exact-reconstruction rate against sparsity")
    _add_sweep_flags(p)
    p.add_argument("--out", default=None, help="report path, .csv or .json (required)")
    _add_config(p)
    p.set_defaults(handler=cmd_curve)

    p = sub.add_parser("critical", help="critical sparsity and relative gains")
    _add_sweep_flags(p)
    p.add_argument("--report", default=None, help="read curves from a report instead of sweeping")
    p.add_argument("--out", default=None, help="also write the sweep as a report")
    p.add_argument("--pairs", default=None, help="comma list of old=new (default: the four classical/alternating pairs)")
    p.add_argument("--near", action="store_true", help="compute gains from the rate>=0.99 statistic")
    _add_config(p)
    p.set_defaults(handler=cmd_critical)

    p = sub.add_parser("equivalence", help="check the unrolled ADMM update and the IAD memory recursion")
    p.add_argument("--m", type=int, default=10, help="default: %(default)s")
    p.add_argument("--n", type=int, default=30, help="default: %(default)s")
    p.add_argument("--alpha", type=float, default=1.0, help="default: %(default)s")
    p.add_argument("--beta", type=float, default=1.0, help="default: %(default)s")
    p.add_argument("--tau", type=float, default=1.0, help="default: %(default)s")
    p.add_argument("--iters", type=int, default=8, help="default: %(default)s")
    p.add_argument("--instances", type=int, default=50, help="default: %(default)s")
    p.add_argument("--seed", type=int, default=0, help="default: %(default)s")
    _add_config(p)
    p.set_defaults(handler=cmd_equivalence)

    p = sub.add_parser("theory", help="convergence constants, error bound and support-identification count")
    p.add_argument("--algorithm", choices=[a.value for a in (Algorithm.IAD, Algorithm.NIAD, Algorithm.ADP)], default=None, help="required")
    p.add_argument("--delta3s", type=float, default=None, help="restricted isometry constant of order 3s, in [0, 1) (required)")
    p.add_argument("--mu", type=float, default=1.0, help="iad step size (default: %(default)s)")
    p.add_argument("--gamma", type=float, default=DEFAULT_GAMMA, help="default: %(default)s")
    p.add_argument("--k", type=int, default=None, help="iteration for the error bound, >= 2")
    p.add_argument("--x0-err", type=float, default=None, help="||x - x(0)||")
    p.add_argument("--noise", type=float, default=None, help="||e'|| (default: 0)")
    p.add_argument("--x-min", type=float, default=None, help="smallest nonzero magnitude of x")
    _add_config(p)
    p.set_defaults(handler=cmd_theory)
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        if isinstance(action, argparse._SubParsersAction):  # noqa: SLF001
            return action.choices[command]
    raise KeyError(command)


def _parse(parser: argparse.ArgumentParser, argv: Optional[Sequence[str]]) -> Tuple[argparse.Namespace, argparse.ArgumentParser]:
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    if args.config:
        allowed = {a.dest for a in sub._actions if a.dest not in ("help", "config", "handler")}  # noqa: SLF001
        try:
            values = read_config_file(args.config, allowed)
        except ConfigFileError as exc:
            sub.error(str(exc))
        switches = {a.dest for a in sub._actions if isinstance(a, argparse._StoreTrueAction)}  # noqa: SLF001
        defaults = {k: (v.strip().lower() == "true") if k in switches else v for k, v in values.items()}
        # Explicit flags win: reparse with the file values as defaults.
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
        # argparse never checks defaults against choices
        for action in sub._actions:  # noqa: SLF001
            value = getattr(args, action.dest, None)
            if action.choices is not None and action.dest in values and value not in action.choices:
                choices = ", ".join(map(repr, action.choices))
                sub.error(f"argument {action.option_strings[0]}: invalid choice: {value!r} (choose from {choices})")
    return args, sub


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_environment()
    parser = build_parser()
    try:
        args, sub = _parse(parser, argv)
        configure_logging(args.log_level)
        handler: Callable[[argparse.Namespace, argparse.ArgumentParser], int] = args.handler
        return handler(args, sub)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else (0 if exc.code is None else 2)
    except (SparseRecoveryError, OSError) as exc:
        logger.debug("main: command failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
