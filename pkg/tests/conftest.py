import numpy as np
import pytest

from gridmesh.casefile import CaseData, ConnectionSpec, TieLine, parse_matpower_case

TWO_BUS = """function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;
%% bus data
mpc.bus = [
    1   3   0   0   0   0   1   1   0   100   1   1.1   0.9;
    2   1   0   0   0   0   1   1   0   100   1   1.1   0.9;
];
mpc.gen = [
    1   0   0   100   -100   1   100   1   200   0;
];
mpc.branch = [
    1   2   0   0.1   0   0   0   0   0   0   1   -360   360;
];
"""


def chain_case(n, name, pv=(2,), load=10.0):
    """Chain of ``n`` buses: bus 1 slack, buses in ``pv`` PV, the rest PQ with a small load."""
    bus = np.zeros((n, 13))
    bus[:, 0] = np.arange(1, n + 1)
    bus[:, 1] = 1
    bus[0, 1] = 3
    gens = [[1, 0, 0, 300, -300, 1.0, 100, 1, 500, 0]]
    for b in pv:
        bus[b - 1, 1] = 2
        gens.append([b, 20, 0, 300, -300, 1.01, 100, 1, 500, 0])
    pq = bus[:, 1] == 1
    bus[pq, 2] = load
    bus[pq, 3] = 0.3 * load
    bus[:, 6] = 1
    bus[:, 7] = 1.0
    bus[:, 9] = 100
    bus[:, 10] = 1
    bus[:, 11] = 1.1
    bus[:, 12] = 0.9
    br = np.zeros((n - 1, 13))
    br[:, 0] = np.arange(1, n)
    br[:, 1] = np.arange(2, n + 1)
    br[:, 2] = 0.01
    br[:, 3] = 0.1
    br[:, 10] = 1
    br[:, 11] = -360
    br[:, 12] = 360
    return CaseData(100.0, bus, np.array(gens, float), br, name)


@pytest.fixture
def two_bus():
    return parse_matpower_case(TWO_BUS, "two_bus")


@pytest.fixture
def three_chains():
    """Three regions with 3, 4 and 5 buses, merged ids {1-3}, {4-7}, {8-12}."""
    cases = [chain_case(3, "a"), chain_case(4, "b"), chain_case(5, "c")]
    ties = [TieLine(1, 2, 2, 1), TieLine(1, 2, 3, 1), TieLine(2, 2, 3, 2)]
    return cases, ConnectionSpec(ties, master=1, n_regions=3)


_ACCEPTANCE = []


def record_acceptance(line):
    _ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
