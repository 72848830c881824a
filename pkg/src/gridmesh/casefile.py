"""Reading and writing MATPOWER-style case files and connection specifications.

Case data is kept in MATPOWER's matrix layout: ``bus``, ``gen`` and ``branch``
are 2-D float arrays whose columns are addressed with the index constants
defined below. Angles stay in degrees and powers in MW/MVAr at this layer.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

# bus columns
BUS_I, BUS_TYPE, PD, QD, GS, BS, BUS_AREA, VM, VA, BASE_KV, ZONE, VMAX, VMIN = range(13)
# gen columns (first ten; MATPOWER defines 21)
GEN_BUS, PG, QG, QMAX, QMIN, VG, MBASE, GEN_STATUS, PMAX, PMIN = range(10)
# branch columns
F_BUS, T_BUS, BR_R, BR_X, BR_B, RATE_A, RATE_B, RATE_C, TAP, SHIFT, BR_STATUS, ANGMIN, ANGMAX = range(13)

PQ, PV, REF = 1, 2, 3

BUS_COLS, GEN_COLS, BRANCH_COLS = 13, 21, 13
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}

DEFAULT_TIE = {"r": 0.0, "x": 0.00623, "b": 0.0, "tap": 0.985, "shift": 0.0}


class CaseFormatError(ValueError):
    """Malformed case text. Carries the 1-based line and column when known."""

    def __init__(self, msg: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f" (line {line}, column {col})" if line is not None else ""
        super().__init__(msg + where)


class CaseValidationError(ValueError):
    pass


class ConnectionSpecError(ValueError):
    pass


@dataclass(eq=False)
class CaseData:
    base_mva: float
    bus: np.ndarray
    gen: np.ndarray
    branch: np.ndarray
    name: str = "case"

    def __post_init__(self):
        self.bus = _pad(np.atleast_2d(np.asarray(self.bus, dtype=float)), BUS_COLS)
        self.gen = _pad(np.atleast_2d(np.asarray(self.gen, dtype=float)), GEN_COLS)
        self.branch = _pad(np.atleast_2d(np.asarray(self.branch, dtype=float)), BRANCH_COLS)

    @property
    def n_bus(self) -> int:
        return self.bus.shape[0]

    @property
    def bus_ids(self) -> np.ndarray:
        return self.bus[:, BUS_I].astype(int)

    def bus_index(self) -> dict[int, int]:
        """Map bus id to row position."""
        return {int(b): i for i, b in enumerate(self.bus[:, BUS_I])}

    @property
    def slack_id(self) -> int:
        return int(self.bus[self.bus[:, BUS_TYPE] == REF, BUS_I][0])

    def copy(self) -> "CaseData":
        return CaseData(self.base_mva, self.bus.copy(), self.gen.copy(), self.branch.copy(), self.name)

    def __eq__(self, other):
        if not isinstance(other, CaseData):
            return NotImplemented
        return (
            self.base_mva == other.base_mva
            and _same(self.bus, other.bus)
            and _same(self.gen, other.gen)
            and _same(self.branch, other.branch)
        )


def _same(a, b):
    return a.shape == b.shape and np.array_equal(a, b)


def _pad(m: np.ndarray, ncols: int) -> np.ndarray:
    if m.size == 0:
        return np.zeros((0, ncols))
    if m.shape[1] >= ncols:
        return m[:, :ncols].copy()
    out = np.zeros((m.shape[0], ncols))
    out[:, : m.shape[1]] = m
    return out


@dataclass(frozen=True)
class TieLine:
    from_region: int
    from_bus: int
    to_region: int
    to_bus: int
    r: float = DEFAULT_TIE["r"]
    x: float = DEFAULT_TIE["x"]
    b: float = DEFAULT_TIE["b"]
    tap: float = DEFAULT_TIE["tap"]
    shift: float = DEFAULT_TIE["shift"]


@dataclass(frozen=True)
class ConnectionSpec:
    """Tie lines between regions. Region indices are 1-based, bus ids are the
    original ids of each region's own case file."""

    ties: tuple[TieLine, ...] = ()
    master: int = 1
    n_regions: int | None = None

    @property
    def n_conn(self) -> int:
        return len(self.ties)


# ----------------------------------------------------------------------------
# .m grammar

_ASSIGN = re.compile(r"mpc\.(\w+)\s*=\s*")
_NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?(?:Inf|inf|NaN|nan)")


def _strip_comments(text: str) -> str:
    # blank out comments but keep offsets so line/column stay meaningful
    out = []
    for line in text.split("\n"):
        k = line.find("%")
        if k >= 0:
            line = line[:k] + " " * (len(line) - k)
        if line.lstrip().startswith("function"):
            line = " " * len(line)
        out.append(line)
    return "\n".join(out)


def _where(text: str, pos: int) -> tuple[int, int]:
    line = text.count("\n", 0, pos) + 1
    return line, pos - (text.rfind("\n", 0, pos) + 1) + 1


def _parse_m(text: str) -> dict:
    text = _strip_comments(text)
    fields: dict = {}
    pos = 0
    while True:
        while pos < len(text) and (text[pos].isspace() or text[pos] == ";"):
            pos += 1
        if pos >= len(text):
            return fields
        m = _ASSIGN.match(text, pos)
        if m is None:
            raise CaseFormatError(f"expected 'mpc.<field> =', got {text[pos:pos + 12]!r}", *_where(text, pos))
        name, pos = m.group(1), m.end()
        if text.startswith("'", pos):
            close = text.find("'", pos + 1)
            if close < 0:
                raise CaseFormatError("unterminated string", *_where(text, pos))
            pos = close + 1
        elif text.startswith("[", pos):
            close = text.find("]", pos)
            if close < 0:
                raise CaseFormatError(f"unterminated matrix mpc.{name}", *_where(text, pos))
            fields[name] = _parse_matrix(text, pos + 1, close, name)
            pos = close + 1
        else:
            n = _NUMBER.match(text, pos)
            if n is None:
                raise CaseFormatError(f"unsupported value for mpc.{name}", *_where(text, pos))
            fields[name] = float(n.group())
            pos = n.end()
        while pos < len(text) and text[pos] in " \t\r":
            pos += 1
        if pos < len(text) and text[pos] not in ";\n":
            raise CaseFormatError(f"unexpected {text[pos]!r} after mpc.{name}", *_where(text, pos))


def _parse_matrix(text: str, start: int, stop: int, name: str) -> np.ndarray:
    rows, row = [], []
    pos = start
    while pos < stop:
        c = text[pos]
        if c in ";\n":
            if row:
                rows.append(row)
                row = []
            pos += 1
        elif c in " \t\r,":
            pos += 1
        elif text.startswith("...", pos):
            pos = text.find("\n", pos) + 1 if text.find("\n", pos, stop) >= 0 else stop
        else:
            n = _NUMBER.match(text, pos, stop)
            if n is None:
                raise CaseFormatError(f"bad entry in mpc.{name}", *_where(text, pos))
            row.append(float(n.group()))
            pos = n.end()
    if row:
        rows.append(row)
    if len({len(r) for r in rows}) > 1:
        raise CaseFormatError(f"rows of mpc.{name} have different lengths", *_where(text, start))
    return np.array(rows, dtype=float) if rows else np.zeros((0, 0))


def parse_matpower_case(text: str, name: str = "case") -> CaseData:
    """Parse the restricted MATPOWER grammar (baseMVA, bus, gen, branch)."""
    fields = _parse_m(text)
    for key in ("baseMVA", "bus", "gen", "branch"):
        if key not in fields:
            raise CaseFormatError(f"missing mpc.{key}")
    return _build_case(fields["baseMVA"], fields["bus"], fields["gen"], fields["branch"], name)


def parse_case_json(text: str, name: str = "case") -> CaseData:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseFormatError(exc.msg, exc.lineno, exc.colno) from None
    for key in ("baseMVA", "bus", "gen", "branch"):
        if key not in obj:
            raise CaseFormatError(f"missing key {key!r}")
    return _build_case(obj["baseMVA"], obj["bus"], obj["gen"], obj["branch"], name)


def _build_case(base_mva, bus, gen, branch, name) -> CaseData:
    mats = {}
    for key, m in (("bus", bus), ("gen", gen), ("branch", branch)):
        m = np.atleast_2d(np.asarray(m, dtype=float))
        if m.size and m.shape[1] < _MIN_COLS[key]:
            raise CaseFormatError(f"mpc.{key} needs at least {_MIN_COLS[key]} columns, got {m.shape[1]}")
        mats[key] = m
    case = CaseData(float(base_mva), mats["bus"], mats["gen"], mats["branch"], name)
    case.branch[case.branch[:, TAP] == 0, TAP] = 1.0
    validate_case(case)
    return case


def validate_case(case: CaseData) -> None:
    bus, gen, branch = case.bus, case.gen, case.branch
    if case.n_bus == 0:
        raise CaseValidationError("case has no buses")
    ids = bus[:, BUS_I]
    if np.any(ids != np.round(ids)) or np.any(ids <= 0):
        raise CaseValidationError("bus ids must be positive integers")
    uniq, counts = np.unique(ids, return_counts=True)
    if np.any(counts > 1):
        raise CaseValidationError(f"duplicate bus id(s) {uniq[counts > 1].astype(int).tolist()}")
    types = bus[:, BUS_TYPE]
    bad = ~np.isin(types, (PQ, PV, REF))
    if np.any(bad):
        raise CaseValidationError(f"unsupported bus type at bus(es) {ids[bad].astype(int).tolist()}")
    n_ref = int(np.sum(types == REF))
    if n_ref != 1:
        raise CaseValidationError(f"expected exactly one slack bus, found {n_ref}")
    if np.any(bus[:, VM] <= 0):
        raise CaseValidationError("voltage magnitudes must be positive")
    idset = set(ids.astype(int).tolist())
    for g in gen[:, GEN_BUS].astype(int):
        if g not in idset:
            raise CaseValidationError(f"generator references unknown bus {g}")
    on = gen[:, GEN_STATUS] > 0
    gen_buses = set(gen[on, GEN_BUS].astype(int).tolist())
    for b, t in zip(ids.astype(int), types):
        if t in (PV, REF) and b not in gen_buses:
            raise CaseValidationError(f"bus {b} is PV/slack but has no active generator")
    active = branch[:, BR_STATUS] > 0
    for f, t in branch[:, [F_BUS, T_BUS]].astype(int):
        if f not in idset or t not in idset:
            raise CaseValidationError(f"branch {f}-{t} references unknown bus")
        if f == t:
            raise CaseValidationError(f"branch {f}-{t} is a self loop")
    if np.any(active & (branch[:, BR_R] == 0) & (branch[:, BR_X] == 0)):
        raise CaseValidationError("active branch with zero impedance")
    idx = case.bus_index()
    fr = [idx[int(b)] for b in branch[active, F_BUS]]
    to = [idx[int(b)] for b in branch[active, T_BUS]]
    adj = coo_matrix((np.ones(len(fr)), (fr, to)), shape=(case.n_bus, case.n_bus))
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp != 1:
        raise CaseValidationError(f"network is not connected ({ncomp} islands)")


def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def _matrix(m: np.ndarray) -> str:
    return "\n".join("\t" + "\t".join(_fmt(v) for v in row) + ";" for row in m)


def write_matpower_case(case: CaseData) -> str:
    """Emit a MATPOWER version-2 case function; floats use shortest round-trip repr."""
    fname = re.sub(r"\W", "_", case.name) or "case"
    return (
        f"function mpc = {fname}\n"
        "mpc.version = '2';\n\n"
        f"mpc.baseMVA = {_fmt(case.base_mva)};\n\n"
        "%% bus data\n"
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin\n"
        f"mpc.bus = [\n{_matrix(case.bus)}\n];\n\n"
        "%% generator data\n"
        "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin\tPc1\tPc2\tQc1min\tQc1max\tQc2min\tQc2max\tramp_agc\tramp_10\tramp_30\tramp_q\tapf\n"
        f"mpc.gen = [\n{_matrix(case.gen)}\n];\n\n"
        "%% branch data\n"
        "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax\n"
        f"mpc.branch = [\n{_matrix(case.branch)}\n];\n"
    )


def write_case_json(case: CaseData) -> str:
    return json.dumps(
        {
            "baseMVA": case.base_mva,
            "bus": case.bus.tolist(),
            "gen": case.gen.tolist(),
            "branch": case.branch.tolist(),
        }
    )


def load_case(path) -> CaseData:
    """Load a ``.m`` or ``.json`` case file, or a bundled case by name (``case9``)."""
    p = Path(path)
    if not p.exists() and p.suffix == "" and (_DATA / f"{p.name}.m").exists():
        p = _DATA / f"{p.name}.m"
    text = p.read_text()
    if p.suffix == ".json":
        return parse_case_json(text, name=p.stem)
    return parse_matpower_case(text, name=p.stem)


_DATA = Path(__file__).parent / "data"


def bundled_case(name: str) -> CaseData:
    return load_case(_DATA / f"{name}.m")


# ----------------------------------------------------------------------------
# connection specifications


def parse_connection_spec(text: str, n_regions: int | None = None) -> ConnectionSpec:
    """Parse the JSON connection format.

    ``{"master": 1, "regions": 3, "connections": [{"from": [1, 17], "to": [2, 46], "x": ...}]}``.
    Tie parameters that are left out take the default transformer values.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConnectionSpecError(f"{exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    if n_regions is None:
        n_regions = obj.get("regions")
    ties = []
    for k, c in enumerate(obj.get("connections", [])):
        try:
            (fr, fb), (tr, tb) = c["from"], c["to"]
        except (KeyError, TypeError, ValueError):
            raise ConnectionSpecError(f"connection {k}: need 'from' and 'to' as [region, bus]") from None
        params = {key: float(c.get(key, default)) for key, default in DEFAULT_TIE.items()}
        ties.append(TieLine(int(fr), int(fb), int(tr), int(tb), **params))
    spec = ConnectionSpec(tuple(ties), int(obj.get("master", 1)), n_regions)
    validate_connection_spec(spec)
    return spec


def validate_connection_spec(spec: ConnectionSpec) -> None:
    n = spec.n_regions
    if n is None:
        n = max([spec.master] + [max(t.from_region, t.to_region) for t in spec.ties])
    for t in spec.ties:
        for r in (t.from_region, t.to_region):
            if not 1 <= r <= n:
                raise ConnectionSpecError(f"region index {r} out of range 1..{n}")
        if t.from_region == t.to_region:
            raise ConnectionSpecError(f"tie {t.from_region}:{t.from_bus} connects a region to itself")
        if t.r == 0 and t.x == 0:
            raise ConnectionSpecError("tie line with zero impedance")
    if not 1 <= spec.master <= n:
        raise ConnectionSpecError(f"master region {spec.master} out of range 1..{n}")
    pairs = [((t.from_region, t.from_bus), (t.to_region, t.to_bus)) for t in spec.ties]
    if len(set(pairs)) != len(pairs):
        raise ConnectionSpecError("duplicate tie line between the same pair of buses")
    if n > 1:
        fr = [t.from_region - 1 for t in spec.ties]
        to = [t.to_region - 1 for t in spec.ties]
        adj = coo_matrix((np.ones(len(fr)), (fr, to)), shape=(n, n))
        ncomp, _ = connected_components(adj, directed=False)
        if ncomp != 1:
            raise ConnectionSpecError("region connection graph is disconnected")


def write_connection_spec(spec: ConnectionSpec) -> str:
    conns = [
        {"from": [t.from_region, t.from_bus], "to": [t.to_region, t.to_bus],
         "r": t.r, "x": t.x, "b": t.b, "tap": t.tap, "shift": t.shift}
        for t in spec.ties
    ]
    obj = {"master": spec.master, "connections": conns}
    if spec.n_regions is not None:
        obj["regions"] = spec.n_regions
    return json.dumps(obj, indent=1)


def load_connection_spec(path, n_regions: int | None = None) -> ConnectionSpec:
    return parse_connection_spec(Path(path).read_text(), n_regions)


def bundled_composite(name) -> tuple[list[CaseData], ConnectionSpec]:
    """Regional cases and connection spec of a bundled composite, e.g. ``53`` or ``conn354``."""
    name = str(name)
    if not name.startswith("conn"):
        name = f"conn{name}"
    text = (_DATA / f"{name}.json").read_text()
    cases = [bundled_case(c) for c in json.loads(text)["cases"]]
    return cases, parse_connection_spec(text, len(cases))


def composite_names() -> list[str]:
    return sorted((p.stem[4:] for p in _DATA.glob("conn*.json")), key=int)
