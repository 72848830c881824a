import json

import numpy as np
import pytest

from gridmesh.casefile import bundled_case, load_case, write_matpower_case
from gridmesh.cli import main
from gridmesh.trace import read_trace


def test_merge_53(tmp_path):
    out = tmp_path / "merged.m"
    assert main(["merge", "--composite", "53", "-o", str(out)]) == 0
    case = load_case(out)
    assert case.n_bus == 53
    side = json.loads(out.with_suffix(".json").read_text())
    assert len(side["regions"]) == 3
    assert len(side["ties"]) == 3


def test_merge_single_case_passes_through(tmp_path):
    out = tmp_path / "one.m"
    assert main(["merge", "case9", "-o", str(out)]) == 0
    np.testing.assert_array_equal(load_case(out).bus, bundled_case("case9").bus)


def test_bad_endpoint(tmp_path, capsys):
    for name in ("case9", "case14"):
        (tmp_path / f"{name}.m").write_text(write_matpower_case(bundled_case(name)))
    conn = tmp_path / "conn.json"
    conn.write_text(json.dumps({"connections": [{"from": [1, 5], "to": [2, 2]}]}))
    code = main(["merge", str(tmp_path / "case9.m"), str(tmp_path / "case14.m"), "--conn", str(conn),
                 "-o", str(tmp_path / "m.m")])
    assert code == 3
    assert "must be generation buses" in capsys.readouterr().err


def test_missing_file(tmp_path):
    assert main(["solve-central", str(tmp_path / "nope.m")]) == 3


def test_split(tmp_path):
    assert main(["split", "--composite", "53", "-o", str(tmp_path)]) == 0
    info = json.loads((tmp_path / "region1.json").read_text())
    assert info["dof_deficit"] == 2 * len(info["copies"])
    assert (tmp_path / "region3.m").exists()


def test_solve_central(tmp_path):
    sol = tmp_path / "sol.json"
    assert main(["solve-central", "case9", "--solution", str(sol)]) == 0
    vm = json.loads(sol.read_text())["vm"]
    assert vm[4] == pytest.approx(0.97547218, abs=1e-6)


def test_solve_aladin_validate(tmp_path, capsys):
    trace, sol = tmp_path / "t.csv", tmp_path / "s.json"
    code = main(["solve", "--composite", "53", "--method", "aladin", "--formulation", "ls",
                 "--hessian", "gauss-newton", "--validate", "--trace", str(trace), "--solution", str(sol)])
    assert code == 0
    t = read_trace(trace.read_text())
    assert t.iterations <= 10
    dev = json.loads(sol.read_text())["deviation"]
    assert max(dev.values()) <= 1e-6
    assert "max |distributed - central|" in capsys.readouterr().out


def test_solve_admm_not_converged(tmp_path):
    trace = tmp_path / "t.csv"
    code = main(["solve", "--composite", "53", "--method", "admm", "--formulation", "feasibility",
                 "--rho", "0.1", "--max-iter", "50", "--trace", str(trace), "--no-timing"])
    assert code != 0
    assert read_trace(trace.read_text()).iterations == 50


def test_gauss_newton_feasibility_rejected():
    assert main(["solve", "--composite", "53", "--formulation", "feasibility"]) == 3


def test_perturb_deterministic(tmp_path):
    args = ["perturb", "--composite", "53", "--method", "admm", "--formulation", "feas", "--max-iter", "5",
            "--sigma", "0", "0.01", "--no-timing"]
    assert main(args + ["-o", str(tmp_path / "a")]) == 0
    assert main(args + ["-o", str(tmp_path / "b")]) == 0
    for name in ("trace_sigma0.csv", "trace_sigma0.01.csv", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert [row["sigma"] for row in summary] == [0.0, 0.01]


def test_sigma_zero_is_reference_start():
    from gridmesh.casefile import bundled_composite
    from gridmesh.experiments import perturbed_start, reference_states
    from gridmesh.topology import build_problem

    ref = reference_states(build_problem(*bundled_composite(53)))
    for a, b in zip(perturbed_start(ref, 0.0, seed=3), ref):
        np.testing.assert_array_equal(a, b)
