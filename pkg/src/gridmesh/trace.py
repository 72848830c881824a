"""Per-iteration convergence records and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, field

import numpy as np

GLOBAL = -1
HEADER = ("iter", "region", "pf_inf", "spec_inf", "consensus_inf", "step_inf", "dual_inf", "local_time_s")


@dataclass
class TraceRow:
    iter: int
    region: int
    pf_inf: float
    spec_inf: float
    consensus_inf: float
    step_inf: float
    dual_inf: float
    local_time_s: float


@dataclass
class IterationTrace:
    """Rows per iteration: one per region (1-based) plus a global row with ``region = -1``."""

    meta: dict = field(default_factory=dict)
    rows: list[TraceRow] = field(default_factory=list)

    def add(self, *args) -> None:
        self.rows.append(TraceRow(*args))

    def global_rows(self) -> list[TraceRow]:
        return [r for r in self.rows if r.region == GLOBAL]

    @property
    def iterations(self) -> int:
        return len(self.global_rows())

    def column(self, name: str, region: int = GLOBAL) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows if r.region == region])

    def to_csv(self, timing: bool = True) -> str:
        buf = io.StringIO()
        for k, v in self.meta.items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HEADER)
        for row in self.rows:
            vals = list(astuple(row))
            if not timing:
                vals[-1] = 0.0
            w.writerow([vals[0], vals[1]] + [repr(float(v)) for v in vals[2:]])
        return buf.getvalue()

    def write(self, path, timing: bool = True) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv(timing))

    def plot_data(self) -> str:
        """Whitespace-separated global-row columns for gnuplot."""
        lines = ["# iter pf_inf spec_inf consensus_inf step_inf dual_inf"]
        for r in self.global_rows():
            lines.append(f"{r.iter} {r.pf_inf:.6e} {r.spec_inf:.6e} {r.consensus_inf:.6e} {r.step_inf:.6e} {r.dual_inf:.6e}")
        return "\n".join(lines) + "\n"


def read_trace(text: str) -> IterationTrace:
    meta, body = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        else:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    if tuple(header) != HEADER:
        raise ValueError(f"unexpected trace header {header}")
    trace = IterationTrace(meta)
    for row in reader:
        trace.add(int(row[0]), int(row[1]), *map(float, row[2:]))
    return trace
