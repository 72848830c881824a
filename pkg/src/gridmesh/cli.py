"""Command-line entry point: merge, split, solve-central, solve and perturb."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .admm import AdmmConfig, admm_solve
from .aladin import AladinConfig, aladin_solve
from .casefile import (CaseFormatError, CaseValidationError, ConnectionSpec, ConnectionSpecError,
                       bundled_composite, composite_names, load_case, load_connection_spec,
                       write_matpower_case)
from .centralized import solve_newton_raphson
from .common import CONVERGED, MAX_ITER
from .errors import ConvergenceError, NumericalError
from .experiments import deviation_from_central, iterations_to, perturbed_start, reference_states
from .localnlp import GAUSS_NEWTON, HESSIAN_METHODS
from .topology import (FEASIBILITY, LEAST_SQUARES, TopologyError, build_problem, dumps_sidecar, gather,
                       merge_cases, merge_sidecar, split_cases)

log = logging.getLogger("gridmesh")

EXIT_OK, EXIT_BUDGET, EXIT_INPUT, EXIT_NUMERICAL = 0, 2, 3, 4
INPUT_ERRORS = (CaseFormatError, CaseValidationError, ConnectionSpecError, TopologyError, FileNotFoundError,
                KeyError, ValueError)
FORMULATIONS = {"feasibility": FEASIBILITY, "feas": FEASIBILITY, "least-squares": LEAST_SQUARES, "ls": LEAST_SQUARES}


class InputError(Exception):
    pass


def _load_inputs(args):
    if args.composite:
        if args.cases or args.conn:
            raise InputError("--composite cannot be combined with case files or --conn")
        return bundled_composite(args.composite)
    if not args.cases:
        raise InputError("give case files (or bundled case names) or --composite")
    cases = []
    for c in args.cases:
        try:
            cases.append(load_case(c))
        except (CaseFormatError, CaseValidationError) as exc:
            raise InputError(f"{c}: {exc}") from None
    if args.conn:
        try:
            spec = load_connection_spec(args.conn, len(cases))
        except ConnectionSpecError as exc:
            raise InputError(f"{args.conn}: {exc}") from None
    elif len(cases) == 1:
        spec = ConnectionSpec([], master=1, n_regions=1)
    else:
        raise InputError("several cases need a connection file (--conn)")
    return cases, spec


def _write(path, text):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)


def cmd_merge(args) -> int:
    cases, spec = _load_inputs(args)
    merged = merge_cases(cases, spec, Path(args.output).stem)
    _write(args.output, write_matpower_case(merged))
    sidecar = args.sidecar or str(Path(args.output).with_suffix(".json"))
    _write(sidecar, dumps_sidecar(merge_sidecar(cases, spec, split_cases(cases, spec))))
    print(f"merged {len(cases)} case(s) into {merged.n_bus} buses -> {args.output}")
    return EXIT_OK


def cmd_split(args) -> int:
    cases, spec = _load_inputs(args)
    regions = split_cases(cases, spec)
    out = Path(args.output)
    for reg in regions:
        stem = out / f"region{reg.index + 1}"
        _write(stem.with_suffix(".m"), write_matpower_case(reg.case))
        info = {
            "region": reg.index + 1, "core_buses": [int(b) for b in reg.core_ids],
            "copies": [{"owner_region": c.owner + 1, "bus": c.bus_id} for c in reg.copies],
            "n_state": reg.n_state, "n_residual": reg.n_residual, "dof_deficit": reg.dof_deficit,
        }
        _write(stem.with_suffix(".json"), json.dumps(info, indent=1))
    print(f"split into {len(regions)} region(s) -> {out}")
    return EXIT_OK


def cmd_solve_central(args) -> int:
    cases, spec = _load_inputs(args)
    case = cases[0] if len(cases) == 1 and not spec.ties else merge_cases(cases, spec)
    sol = solve_newton_raphson(case, tol=args.tol, max_iter=args.max_iter)
    if args.solution:
        _write(args.solution, json.dumps(sol.as_dict(), indent=1))
    print(f"Newton-Raphson converged in {sol.iterations} iterations, mismatch {sol.mismatch:.3e}")
    return EXIT_OK


def _config(args, zeta0=None):
    if args.method == "aladin":
        hess = args.hessian or GAUSS_NEWTON
        return AladinConfig(rho=args.rho if args.rho is not None else AladinConfig.rho,
                            nu=args.nu if args.nu is not None else AladinConfig.nu,
                            hessian=hess, tol=args.tol, max_iter=args.max_iter, zeta0=zeta0)
    return AdmmConfig(rho=args.rho if args.rho is not None else AdmmConfig.rho, tol=args.tol,
                      max_iter=args.max_iter, zeta0=zeta0)


def _run(problem, args, zeta0=None):
    cfg = _config(args, zeta0)
    if args.method == "aladin":
        return aladin_solve(problem, cfg, record_time=not args.no_timing)
    return admm_solve(problem, cfg, record_time=not args.no_timing)


def _exit_code(status) -> int:
    if status == CONVERGED:
        return EXIT_OK
    if status == MAX_ITER:
        return EXIT_BUDGET
    return EXIT_NUMERICAL


def _check_method(args):
    if args.method == "aladin" and (args.hessian or GAUSS_NEWTON) == GAUSS_NEWTON and args.formulation != LEAST_SQUARES:
        raise InputError("the gauss-newton Hessian requires --formulation least-squares")
    if args.method == "admm" and args.hessian:
        raise InputError("--hessian applies to --method aladin only")


def cmd_solve(args) -> int:
    _check_method(args)
    cases, spec = _load_inputs(args)
    problem = build_problem(cases, spec, args.formulation)
    result = _run(problem, args)
    if args.trace:
        result.trace.write(args.trace, timing=not args.no_timing)
    if args.plot:
        _write(args.plot, result.trace.plot_data())
    sol = {k: np.asarray(v).tolist() for k, v in gather(problem, result.states).items()}
    sol.update(status=result.status, iterations=result.iterations, message=result.message)
    if args.validate:
        if result.converged:
            dev = deviation_from_central(problem, result.states)
            sol["deviation"] = dev
            print("max |distributed - central|: " + ", ".join(f"{k} {v:.3e}" for k, v in dev.items()))
        else:
            print("validation skipped: run did not converge")
    if args.solution:
        _write(args.solution, json.dumps(sol, indent=1))
    print(f"{args.method}: {result.status} after {result.iterations} iterations"
          + (f" ({result.message})" if result.message else ""))
    return _exit_code(result.status)


def cmd_perturb(args) -> int:
    _check_method(args)
    cases, spec = _load_inputs(args)
    problem = build_problem(cases, spec, args.formulation)
    ref = reference_states(problem)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for sigma in args.sigma:
        result = _run(problem, args, perturbed_start(ref, sigma, args.seed))
        result.trace.meta.update(sigma=sigma, seed=args.seed)
        result.trace.write(out / f"trace_sigma{sigma:g}.csv", timing=not args.no_timing)
        reach = iterations_to(result.trace, args.threshold)
        summary.append({"sigma": sigma, "status": result.status, "iterations": result.iterations,
                        "iterations_to_threshold": None if np.isinf(reach) else int(reach)})
        print(f"sigma {sigma:g}: {result.status}, consensus <= {args.threshold:g} at iteration "
              f"{'never' if np.isinf(reach) else int(reach)}")
    _write(out / "summary.json", json.dumps(summary, indent=1))
    return EXIT_OK


def _add_inputs(p):
    p.add_argument("cases", nargs="*", help="MATPOWER .m / JSON case files or bundled case names")
    p.add_argument("--conn", help="connection specification (JSON)")
    p.add_argument("--composite", choices=composite_names(), help="bundled multi-region composite")


def _add_solver(p):
    p.add_argument("--method", choices=("admm", "aladin"), default="aladin")
    p.add_argument("--formulation", type=lambda s: FORMULATIONS[s.lower()], default=LEAST_SQUARES,
                   help="feasibility | least-squares (aliases feas, ls)")
    p.add_argument("--hessian", choices=HESSIAN_METHODS)
    p.add_argument("--rho", type=float)
    p.add_argument("--nu", type=float)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=30)
    p.add_argument("--no-timing", action="store_true", help="write zero local times so traces are reproducible")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridmesh", description="Distributed AC power flow with ADMM and ALADIN.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("merge", help="merge regional cases into one case file")
    _add_inputs(p)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--sidecar", help="sidecar JSON path (default: output with .json)")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("split", help="write per-region case files with core/copy metadata")
    _add_inputs(p)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("solve-central", help="Newton-Raphson power flow of a case or merged composite")
    _add_inputs(p)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=30)
    p.add_argument("--solution")
    p.set_defaults(func=cmd_solve_central)

    p = sub.add_parser("solve", help="distributed solve")
    _add_inputs(p)
    _add_solver(p)
    p.add_argument("--trace", help="trace CSV path")
    p.add_argument("--solution", help="solution JSON path")
    p.add_argument("--plot", help="gnuplot data path")
    p.add_argument("--validate", action="store_true", help="compare with the central Newton-Raphson solution")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("perturb", help="solve from perturbed reference starts")
    _add_inputs(p)
    _add_solver(p)
    p.add_argument("--sigma", type=float, nargs="+", default=[0.01, 0.1, 1.0, 10.0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=1e-3, help="consensus level for iterations-to-threshold")
    p.add_argument("-o", "--output", required=True, help="output directory for traces")
    p.set_defaults(func=cmd_perturb)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, ConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
