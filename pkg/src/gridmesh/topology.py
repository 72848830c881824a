"""Compose regional cases: merge into one case, split into regions with copy buses,
and build the consensus matrices that tie copies to their originals."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .casefile import (
    BR_B, BR_R, BR_STATUS, BR_X, BS, BUS_I, GS, BUS_TYPE, F_BUS, GEN_BUS, GEN_STATUS, PD, PQ,
    PV, QD, REF, SHIFT, T_BUS, TAP, VA, VM, CaseData, ConnectionSpec, TieLine,
    validate_case, validate_connection_spec, ConnectionSpecError,
)
from .network import CopyBus, RegionModel, assemble_ybus, bus_specs, initial_state

FEASIBILITY = "feasibility"
LEAST_SQUARES = "least-squares"
FORMULATIONS = (FEASIBILITY, LEAST_SQUARES)


class TopologyError(ValueError):
    pass


def _check_spec(cases: list[CaseData], spec: ConnectionSpec) -> None:
    if spec.n_regions is not None and spec.n_regions != len(cases):
        raise ConnectionSpecError(f"connection spec names {spec.n_regions} regions, got {len(cases)} cases")
    validate_connection_spec(ConnectionSpec(spec.ties, spec.master, len(cases)))
    for t in spec.ties:
        for r, b in ((t.from_region, t.from_bus), (t.to_region, t.to_bus)):
            case = cases[r - 1]
            idx = case.bus_index()
            if b not in idx:
                raise TopologyError(f"region {r} has no bus {b}")
            if case.bus[idx[b], BUS_TYPE] not in (PV, REF):
                raise TopologyError(
                    f"connecting bus {b} of region {r} is a PQ bus; tie endpoints must be generation buses (slack or PV)"
                )


def apply_bus_surgery(cases: list[CaseData], spec: ConnectionSpec) -> list[CaseData]:
    """Return copies of ``cases`` with bus types rewritten so that only the master's slack remains.

    In each worker region: a slack bus that receives a tie becomes PQ with no
    generation and no demand; a PV bus that receives a tie becomes PQ with no
    generation; a slack bus that receives no tie becomes PV.
    """
    _check_spec(cases, spec)
    out = []
    for r, case in enumerate(cases, start=1):
        c = case.copy()
        if r != spec.master:
            idx = c.bus_index()
            slack = c.slack_id
            receiving = sorted({t.to_bus for t in spec.ties if t.to_region == r})
            for b in receiving:
                k = idx[b]
                on_bus = c.gen[:, GEN_BUS] == b
                if c.bus[k, BUS_TYPE] == REF:
                    c.bus[k, [PD, QD]] = 0.0
                c.bus[k, BUS_TYPE] = PQ
                c.gen[on_bus, GEN_STATUS] = 0
            if slack not in receiving:
                c.bus[idx[slack], BUS_TYPE] = PV
        out.append(c)
    return out


def bus_id_maps(cases: list[CaseData]) -> list[dict[int, int]]:
    """Original bus id -> merged id, region blocks concatenated in order, ids 1..N."""
    maps, offset = [], 0
    for case in cases:
        maps.append({int(b): offset + k + 1 for k, b in enumerate(case.bus[:, BUS_I])})
        offset += case.n_bus
    return maps


def tie_row(f: int, t: int, tie: TieLine) -> np.ndarray:
    row = np.zeros(13)
    row[[F_BUS, T_BUS, BR_R, BR_X, BR_B, TAP, SHIFT, BR_STATUS]] = [f, t, tie.r, tie.x, tie.b, tie.tap, tie.shift, 1]
    row[11], row[12] = -360, 360
    return row


def _concat(prepared: list[CaseData], spec: ConnectionSpec, name: str) -> CaseData:
    maps = bus_id_maps(prepared)
    buses, gens, branches = [], [], []
    for case, m in zip(prepared, maps):
        remap = np.vectorize(lambda b: m[int(b)], otypes=[float])
        bus = case.bus.copy()
        bus[:, BUS_I] = remap(bus[:, BUS_I])
        gen = case.gen.copy()
        if len(gen):
            gen[:, GEN_BUS] = remap(gen[:, GEN_BUS])
        br = case.branch.copy()
        if len(br):
            br[:, [F_BUS, T_BUS]] = remap(br[:, [F_BUS, T_BUS]])
        buses.append(bus)
        gens.append(gen)
        branches.append(br)
    for t in spec.ties:
        branches.append(tie_row(maps[t.from_region - 1][t.from_bus], maps[t.to_region - 1][t.to_bus], t)[None, :])
    base = prepared[0].base_mva
    if any(c.base_mva != base for c in prepared):
        raise TopologyError("all cases must share the same baseMVA")
    return CaseData(base, np.vstack(buses), np.vstack(gens), np.vstack(branches), name)


def merge_cases(cases: list[CaseData], spec: ConnectionSpec, name: str = "merged") -> CaseData:
    """One MATPOWER-compatible case containing all regions and tie lines."""
    merged = _concat(apply_bus_surgery(cases, spec), spec, name)
    validate_case(merged)
    return merged


def merge_sidecar(cases: list[CaseData], spec: ConnectionSpec, regions: list[RegionModel] | None = None) -> dict:
    """Region membership, id maps and copy-bus provenance for a merged case."""
    maps = bus_id_maps(cases)
    out = {
        "master": spec.master,
        "regions": [
            {"region": r + 1, "name": c.name, "bus_map": {str(k): v for k, v in m.items()}}
            for r, (c, m) in enumerate(zip(cases, maps))
        ],
        "ties": [
            {"from": [t.from_region, t.from_bus], "to": [t.to_region, t.to_bus],
             "merged": [maps[t.from_region - 1][t.from_bus], maps[t.to_region - 1][t.to_bus]]}
            for t in spec.ties
        ],
    }
    if regions is not None:
        for entry, reg in zip(out["regions"], regions):
            entry["copies"] = [{"owner_region": c.owner + 1, "bus": c.bus_id} for c in reg.copies]
    return out


def split_cases(cases: list[CaseData], spec: ConnectionSpec) -> list[RegionModel]:
    """Region models with core buses, one copy bus per incident tie, and tie branches."""
    prepared = apply_bus_surgery(cases, spec)
    maps = bus_id_maps(prepared)
    regions = []
    for r, case in enumerate(prepared):
        idx = case.bus_index()
        # (owner, global id, tie, local endpoint, local end is the from side)
        incident = []
        for t in spec.ties:
            if t.from_region - 1 == r:
                incident.append((t.to_region - 1, maps[t.to_region - 1][t.to_bus], t.to_bus, t, t.from_bus, True))
            if t.to_region - 1 == r:
                incident.append((t.from_region - 1, maps[t.from_region - 1][t.from_bus], t.from_bus, t, t.to_bus, False))
        incident.sort(key=lambda e: (e[0], e[1]))
        nc = case.n_bus
        copies = tuple(
            CopyBus(owner, prepared[owner].bus_index()[orig], gid) for owner, gid, orig, *_ in incident
        )
        br = case.branch[case.branch[:, BR_STATUS] > 0]
        f = [idx[int(b)] for b in br[:, F_BUS]]
        to = [idx[int(b)] for b in br[:, T_BUS]]
        params = [list(br[:, BR_R]), list(br[:, BR_X]), list(br[:, BR_B]), list(br[:, TAP]), list(br[:, SHIFT])]
        for k, (_, _, _, tie, local, is_from) in enumerate(incident):
            a, b = idx[local], nc + k
            f.append(a if is_from else b)
            to.append(b if is_from else a)
            for lst, val in zip(params, (tie.r, tie.x, tie.b, tie.tap, tie.shift)):
                lst.append(val)
        shunt = np.r_[(case.bus[:, GS] + 1j * case.bus[:, BS]) / case.base_mva, np.zeros(len(incident))]
        Y = assemble_ybus(nc + len(incident), f, to, *params, shunt=shunt)
        copy_start = np.array(
            [[np.deg2rad(prepared[o].bus[prepared[o].bus_index()[orig], VA]),
              prepared[o].bus[prepared[o].bus_index()[orig], VM]] for o, _, orig, *_ in incident]
        ).reshape(-1, 2)
        x0 = np.r_[initial_state(case), copy_start[:, 0], copy_start[:, 1]]
        model = RegionModel(
            r, np.array([maps[r][int(b)] for b in case.bus[:, BUS_I]]), copies, Y,
            *bus_specs(case), x0, local_ids=case.bus_ids, case=case,
        )
        regions.append(model)
    return regions


@dataclass(frozen=True)
class ConsensusBlock:
    region: int
    A: sp.csr_matrix


def build_consensus(regions: list[RegionModel], spec: ConnectionSpec | None = None) -> list[ConsensusBlock]:
    """Consensus matrices: per copy bus an angle row and a magnitude row, +1 on the copy
    entry and -1 on the owner's core entry."""
    n_rows = 2 * sum(r.n_copy for r in regions)
    if spec is not None and n_rows != 4 * spec.n_conn:
        raise TopologyError(f"expected {4 * spec.n_conn} consensus rows, regions provide {n_rows}")
    entries = [([], [], []) for _ in regions]
    row = 0
    for reg in regions:
        nc, ncp = reg.n_core, reg.n_copy
        for k, c in enumerate(reg.copies):
            owner = regions[c.owner]
            if owner.core_ids[c.owner_pos] != c.bus_id:
                raise TopologyError(f"copy bus {c.bus_id} of region {reg.index + 1} does not match its owner")
            for off, (copy_col, core_col) in enumerate(
                ((4 * nc + k, c.owner_pos), (4 * nc + ncp + k, owner.n_core + c.owner_pos))
            ):
                entries[reg.index][0].append(row + off)
                entries[reg.index][1].append(copy_col)
                entries[reg.index][2].append(1.0)
                entries[c.owner][0].append(row + off)
                entries[c.owner][1].append(core_col)
                entries[c.owner][2].append(-1.0)
            row += 2
    return [
        ConsensusBlock(reg.index, sp.csr_matrix((v, (i, j)), shape=(n_rows, reg.n_state)))
        for reg, (i, j, v) in zip(regions, entries)
    ]


@dataclass(eq=False)
class DistProblem:
    formulation: str
    regions: list[RegionModel]
    consensus: list[ConsensusBlock]
    merged: CaseData
    spec: ConnectionSpec
    cases: list[CaseData] = field(default_factory=list)

    def __post_init__(self):
        if self.formulation not in FORMULATIONS:
            raise ValueError(f"formulation must be one of {FORMULATIONS}")
        for reg, blk in zip(self.regions, self.consensus):
            if blk.A.shape[1] != reg.n_state:
                raise ValueError(f"consensus block {blk.region} does not match region state size")

    @property
    def A(self) -> list[sp.csr_matrix]:
        return [b.A for b in self.consensus]

    @property
    def n_consensus(self) -> int:
        return self.consensus[0].A.shape[0] if self.consensus else 0

    def consensus_residual(self, chis) -> np.ndarray:
        out = np.zeros(self.n_consensus)
        for A, chi in zip(self.A, chis):
            out += A @ chi
        return out

    def initial_states(self) -> list[np.ndarray]:
        return [r.x0.copy() for r in self.regions]

    def with_formulation(self, formulation: str) -> "DistProblem":
        return DistProblem(formulation, self.regions, self.consensus, self.merged, self.spec, self.cases)


def build_problem(cases: list[CaseData], spec: ConnectionSpec, formulation: str = LEAST_SQUARES) -> DistProblem:
    regions = split_cases(cases, spec)
    return DistProblem(formulation, regions, build_consensus(regions, spec), merge_cases(cases, spec), spec, list(cases))


def remerge(regions: list[RegionModel], spec: ConnectionSpec, name: str = "merged") -> CaseData:
    """Merge the regions' own (already re-typed) cases again, dropping copy buses."""
    return _concat([r.case for r in regions], spec, name)


def scatter(problem: DistProblem, vm, va_rad, p, q) -> list[np.ndarray]:
    """Region states from per-bus merged-case quantities (merged ids 1..N in row order)."""
    vm, va, p, q = (np.asarray(a, float) for a in (vm, va_rad, p, q))
    pos = {int(b): k for k, b in enumerate(problem.merged.bus[:, BUS_I])}
    out = []
    for reg in problem.regions:
        core = np.array([pos[int(b)] for b in reg.core_ids], int)
        cp = np.array([pos[c.bus_id] for c in reg.copies], int)
        out.append(np.r_[va[core], vm[core], p[core], q[core], va[cp], vm[cp]])
    return out


def gather(problem: DistProblem, chis) -> dict[str, np.ndarray]:
    """Per-bus vm, va (rad), p, q of the merged case from region core states."""
    n = problem.merged.n_bus
    pos = {int(b): k for k, b in enumerate(problem.merged.bus[:, BUS_I])}
    vm, va, p, q = np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n)
    for reg, chi in zip(problem.regions, chis):
        core = np.array([pos[int(b)] for b in reg.core_ids], int)
        th, v, pp, qq, _, _ = reg.split(chi)
        va[core], vm[core], p[core], q[core] = th, v, pp, qq
    return {"bus": problem.merged.bus_ids, "vm": vm, "va": va, "p": p, "q": q}


def dumps_sidecar(sidecar: dict) -> str:
    return json.dumps(sidecar, indent=1)
