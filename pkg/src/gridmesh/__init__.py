"""Distributed AC power flow: regional case composition, ADMM and ALADIN solvers."""

from .admm import AdmmConfig, admm_coordination, admm_solve
from .aladin import AladinConfig, SensitivityPack, aladin_coordination_qp, aladin_solve, aladin_update
from .casefile import (CaseData, ConnectionSpec, TieLine, bundled_case, bundled_composite, load_case,
                       load_connection_spec, parse_case_json, parse_connection_spec, parse_matpower_case,
                       validate_case, write_case_json, write_matpower_case)
from .centralized import PFSolution, solve_newton_raphson
from .common import SolveResult
from .localnlp import (BFGS, FINITE_DIFF, GAUSS_NEWTON, LBFGS, HessianApprox, LocalObjective, solve_local)
from .network import RegionModel, pf_jacobian, residual
from .topology import FEASIBILITY, LEAST_SQUARES, DistProblem, build_problem, merge_cases, split_cases
from .trace import IterationTrace, read_trace

__all__ = [
    "AdmmConfig", "admm_coordination", "admm_solve",
    "AladinConfig", "SensitivityPack", "aladin_coordination_qp", "aladin_solve", "aladin_update",
    "CaseData", "ConnectionSpec", "TieLine", "bundled_case", "bundled_composite", "load_case",
    "load_connection_spec", "parse_case_json", "parse_connection_spec", "parse_matpower_case",
    "validate_case", "write_case_json", "write_matpower_case",
    "PFSolution", "solve_newton_raphson", "SolveResult",
    "BFGS", "FINITE_DIFF", "GAUSS_NEWTON", "LBFGS", "HessianApprox", "LocalObjective", "solve_local",
    "RegionModel", "pf_jacobian", "residual",
    "FEASIBILITY", "LEAST_SQUARES", "DistProblem", "build_problem", "merge_cases", "split_cases",
    "IterationTrace", "read_trace",
]
