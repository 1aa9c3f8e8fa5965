"""Command-line front end: ``rosl-bolza {step,approx,solve,check,study}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from dotenv import load_dotenv
from pydantic import ValidationError

from . import bolza, kkt
from .errors import ConfigurationError, InvalidProblemError, NumericalError
from .implicit_step import approximate_trajectory, explicit_step, implicit_step
from .models.base import Mode, SolveStatus
from .models.problem import ProblemFile, SolverConfig
from .provenance import Provenance
from .trajectory import ReferenceTrajectory

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def load_problem(path: str) -> ProblemFile:
    """Read and validate a JSON problem file.

    Raises:
        InvalidProblemError: If the file cannot be read or is not JSON
        pydantic.ValidationError: If the document does not describe a problem
    """
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidProblemError(f"Cannot read problem file {path}: {e}") from e
    return ProblemFile.model_validate(data)


def _vector(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"not a comma-separated vector: {text}") from e


def _counts(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"not a comma-separated list: {text}") from e


def _write_json(document: Dict[str, Any], path: Optional[str]) -> None:
    text = json.dumps(document, indent=2)
    if path is None:
        print(text)
        return
    with open(path, "w", encoding="utf-8") as f:
        f.write(text + "\n")


def _provenance(args: argparse.Namespace, *inputs: Optional[str]) -> Provenance:
    return Provenance(
        args.command,
        seed=args.seed,
        inputs=[p for p in inputs if p],
        timestamp=False if args.no_timestamp else None,
    )


def _setup(
    args: argparse.Namespace,
) -> Tuple[ProblemFile, bolza.BolzaSpec, ReferenceTrajectory, SolverConfig]:
    problem = load_problem(args.problem)
    spec = bolza.BolzaSpec.from_problem(problem)
    ref_path = getattr(args, "ref", None)
    if ref_path:
        ref = ReferenceTrajectory.read_csv(ref_path)
    else:
        ref = bolza.reference_from_problem(problem, spec)
    config = problem.solver
    if args.seed is not None:
        config = config.model_copy(update={"seeds": [args.seed]})
    return problem, spec, ref, config


def _mode(args: argparse.Namespace, config: SolverConfig) -> Mode:
    return Mode(args.mode) if args.mode else config.mode


def cmd_step(args: argparse.Namespace) -> int:
    problem = load_problem(args.problem)
    dynamics = problem.dynamics
    if args.explicit:
        y, residual = explicit_step(dynamics, args.x, args.t, args.h, args.guess), 0.0
    else:
        y, residual = implicit_step(
            dynamics, args.x, args.t, args.h, guess=args.guess, tol=args.tol
        )
    document = {
        "y": np.asarray(y).tolist(),
        "residual": residual,
        "explicit": args.explicit,
        "provenance": _provenance(args, args.problem).to_dict(),
    }
    _write_json(document, args.out)
    return EXIT_OK


def cmd_approx(args: argparse.Namespace) -> int:
    _, spec, ref, _ = _setup(args)
    traj, report = approximate_trajectory(spec.dynamics, ref, args.k)
    comments = _provenance(args, args.problem, args.ref).comment_lines()
    comments += [f"{key}={value}" for key, value in asdict(report).items()]
    if args.out:
        traj.to_csv(args.out, comments)
    print(json.dumps(asdict(report), indent=2))
    return EXIT_OK


def _assemble(
    problem: ProblemFile,
    spec: bolza.BolzaSpec,
    ref: ReferenceTrajectory,
    k: int,
    mode: Mode,
    eta_k: Optional[float] = None,
) -> bolza.DiscretizedProblem:
    if eta_k is None:
        eta_k = problem.localization.eta
    return bolza.assemble(spec, k, mode, eta_k, ref)


def cmd_solve(args: argparse.Namespace) -> int:
    problem, spec, ref, config = _setup(args)
    dp = _assemble(problem, spec, ref, args.k, _mode(args, config))
    result = bolza.solve(dp, config)
    document = result.to_dict()
    document["provenance"] = _provenance(args, args.problem, args.ref).to_dict()
    _write_json(document, args.out)
    if result.status is SolveStatus.INFEASIBLE:
        log.error("no feasible point found (violation %.3e)", result.violation)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_check(args: argparse.Namespace) -> int:
    problem, spec, ref, _ = _setup(args)
    try:
        with open(args.sol, encoding="utf-8") as f:
            result = bolza.SolveResult.from_dict(json.load(f))
    except (OSError, json.JSONDecodeError) as e:
        raise InvalidProblemError(f"Cannot read solution file {args.sol}: {e}") from e
    dp = _assemble(problem, spec, ref, result.traj.k, result.mode, result.eta_k)
    multipliers = None
    if args.recover:
        multipliers = kkt.recover_adjoint(dp, result.traj)
    report = kkt.check(dp, result, args.tol, multipliers=multipliers)
    document = {
        "report": report.to_dict(),
        "provenance": _provenance(args, args.problem, args.ref, args.sol).to_dict(),
    }
    if multipliers is not None:
        document["multipliers"] = multipliers.to_dict()
    _write_json(document, args.out)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_study(args: argparse.Namespace) -> int:
    problem, spec, ref, config = _setup(args)
    table = bolza.study(
        spec,
        ref,
        args.k,
        _mode(args, config),
        config,
        eta=problem.localization.eta,
        threads=args.threads,
    )
    comments = _provenance(args, args.problem, args.ref).comment_lines()
    comments.append(f"mode={table.mode}")
    comments.append(f"sup_monotone={table.sup_monotone}")
    comments.append(f"w12_monotone={table.w12_monotone}")
    comments += [f"k={row.k} failed: {row.error}" for row in table.rows if row.error]
    if args.out:
        table.to_csv(args.out, comments)
    else:
        print(",".join(bolza.STUDY_HEADER))
        for row in table.rows:
            print(",".join(str(value) for value in row.values()))
    if all(row.error for row in table.rows):
        return EXIT_NUMERICAL
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rosl-bolza",
        description="Discrete approximations of Bolza problems for ROSL inclusions.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--problem", required=True, help="JSON problem file")
    common.add_argument("--seed", type=int, default=None, help="override seeds")
    common.add_argument("--out", default=None, help="output file (default stdout)")
    common.add_argument(
        "--no-timestamp", action="store_true", help="omit the creation time"
    )
    common.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    step = sub.add_parser("step", parents=[common], help="one Euler step")
    step.add_argument("--x", type=_vector, required=True)
    step.add_argument("--t", type=float, required=True)
    step.add_argument("--h", type=float, required=True)
    step.add_argument("--guess", type=_vector, default=None)
    step.add_argument("--tol", type=float, default=1e-10)
    step.add_argument("--explicit", action="store_true", help="explicit step")
    step.set_defaults(handler=cmd_step)

    def with_ref(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--ref", default=None, help="reference trajectory CSV")
        return p

    approx = with_ref(
        sub.add_parser("approx", parents=[common], help="implicit-Euler approximation")
    )
    approx.add_argument("--k", type=int, required=True)
    approx.set_defaults(handler=cmd_approx)

    solve = with_ref(sub.add_parser("solve", parents=[common], help="solve P_k"))
    solve.add_argument("--k", type=int, required=True)
    solve.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    solve.set_defaults(handler=cmd_solve)

    check = with_ref(sub.add_parser("check", parents=[common], help="KKT residuals"))
    check.add_argument("--sol", required=True, help="solution JSON from solve")
    check.add_argument("--tol", type=float, default=None)
    check.add_argument(
        "--recover", action="store_true", help="recover multipliers first"
    )
    check.set_defaults(handler=cmd_check)

    study = with_ref(sub.add_parser("study", parents=[common], help="k sweep"))
    study.add_argument("--k", type=_counts, default=[8, 16, 32, 64])
    study.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    study.add_argument("--threads", type=int, default=None)
    study.set_defaults(handler=cmd_study)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, dispatch the subcommand and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    if args.verbose:
        logging.getLogger("rosl_bolza").setLevel(logging.DEBUG)
    try:
        return args.handler(args)
    except (ConfigurationError, ValidationError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL


def main() -> None:
    load_dotenv()
    logging.basicConfig(
        level=os.getenv("ROSL_LOG_LEVEL", "WARNING").upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    sys.exit(run())
