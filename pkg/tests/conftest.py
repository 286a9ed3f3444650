from __future__ import annotations

import numpy as np
import pytest

from radial_dg.case import BranchRecord, BusKind, BusRecord, NetworkCase, builtin_ieee33
from radial_dg.loadability import network_loadability

ACCEPTANCE_LINES: list[str] = []


def make_case(parents, r, x, p_load, q_load, base_mva=1.0, b_shunt=None, name="synthetic"):
    """Radial case with bus 1 as slack; bus k+2 hangs off ``parents[k]``."""
    n = len(parents) + 1
    buses = [BusRecord(1, BusKind.SLACK, 0.0, 0.0)]
    buses += [BusRecord(k, BusKind.PQ, float(p_load[k - 2]), float(q_load[k - 2]))
              for k in range(2, n + 1)]
    bsh = b_shunt if b_shunt is not None else [0.0] * len(parents)
    branches = [BranchRecord(int(parents[k]), k + 2, float(r[k]), float(x[k]), float(bsh[k]))
                for k in range(len(parents))]
    return NetworkCase(base_mva, tuple(buses), tuple(branches), name=name)


def two_bus(r=0.05, x=0.05, p_mw=1.0, q_mvar=0.0, base_mva=100.0):
    return make_case([1], [r], [x], [p_mw], [q_mvar], base_mva=base_mva, name="two_bus")


def two_bus_closed_form(r, x, p, q, v1=1.0):
    """|V2| of a lossy line feeding a PQ load, from the quartic in |V2| (p.u. inputs)."""
    b = 2.0 * (r * p + x * q) - v1 ** 2
    c = (r * r + x * x) * (p * p + q * q)
    u = (-b + np.sqrt(b * b - 4.0 * c)) / 2.0
    return float(np.sqrt(u))


@pytest.fixture(scope="session")
def ieee33():
    return builtin_ieee33()


@pytest.fixture(scope="session")
def stage1_records(ieee33):
    return network_loadability(ieee33)


@pytest.fixture
def small_feeder():
    # 6-bus lateral feeder on a 1 MVA base, heavy enough to bind a 0.95 floor.
    return make_case([1, 2, 3, 2, 5], [0.02, 0.03, 0.04, 0.03, 0.05],
                     [0.015, 0.02, 0.03, 0.02, 0.03],
                     [0.10, 0.20, 0.15, 0.10, 0.20], [0.05, 0.10, 0.05, 0.05, 0.10])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
