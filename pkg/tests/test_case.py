import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_case
from radial_dg.case import (BranchRecord, BusKind, CaseFormatError, NetworkCase,
                            builtin_ieee33_text, load_case, parse_case, serialize_case,
                            validate_radial)

# Baran & Wu branch data in ohms, typed in independently of the shipped file.
IEEE33_OHMS = [
    (1, 2, 0.0922, 0.0470), (2, 3, 0.4930, 0.2511), (3, 4, 0.3660, 0.1864),
    (4, 5, 0.3811, 0.1941), (5, 6, 0.8190, 0.7070), (6, 7, 0.1872, 0.6188),
    (7, 8, 0.7114, 0.2351), (8, 9, 1.0300, 0.7400), (9, 10, 1.0440, 0.7400),
    (10, 11, 0.1966, 0.0650), (11, 12, 0.3744, 0.1238), (12, 13, 1.4680, 1.1550),
    (13, 14, 0.5416, 0.7129), (14, 15, 0.5910, 0.5260), (15, 16, 0.7463, 0.5450),
    (16, 17, 1.2890, 1.7210), (17, 18, 0.7320, 0.5740), (2, 19, 0.1640, 0.1565),
    (19, 20, 1.5042, 1.3554), (20, 21, 0.4095, 0.4784), (21, 22, 0.7089, 0.9373),
    (3, 23, 0.4512, 0.3083), (23, 24, 0.8980, 0.7091), (24, 25, 0.8960, 0.7011),
    (6, 26, 0.2030, 0.1034), (26, 27, 0.2842, 0.1447), (27, 28, 1.0590, 0.9337),
    (28, 29, 0.8042, 0.7006), (29, 30, 0.5075, 0.2585), (30, 31, 0.9744, 0.9630),
    (31, 32, 0.3105, 0.3619), (32, 33, 0.3410, 0.5302),
]


def small_text(extra=""):
    return f"""function mpc = tiny
mpc.version = '2';
mpc.baseMVA = 1;
mpc.bus = [
    1 3 0 0 0 0 1 1 0 11 1 1.05 0.95;
    2 1 0.1 0.05 0 0 1 1 0 11 1 1.05 0.95;  % load bus
    3 1 0.2 0.1 0 0 1 1 0 11 1 1.05 0.95;
];
mpc.gen = [
    1 0 0 5 -5 1 1 1 5 -5;
];
mpc.branch = [
    1 2 0.01 0.02 0 0 0 0 0 0 1 -360 360;
    2 3 0.02 0.03 0 0 0 0 0 0 1 -360 360;
];
{extra}"""


class TestBuiltin:
    def test_shape_and_totals(self, ieee33):
        assert ieee33.n_bus == 33
        assert len(ieee33.branches) == 32
        assert ieee33.slack_bus.id == 1
        assert ieee33.total_p_load == pytest.approx(3.715, abs=1e-12)
        assert ieee33.total_q_load == pytest.approx(2.3, abs=1e-12)

    def test_impedances_match_ohmic_table(self, ieee33):
        zb = 12.66 ** 2 / ieee33.base_mva
        got = {(b.from_bus, b.to_bus): (b.r * zb, b.x * zb) for b in ieee33.branches}
        for f, t, r, x in IEEE33_OHMS:
            assert got[(f, t)] == pytest.approx((r, x), rel=1e-9)

    def test_radial(self, ieee33):
        report = validate_radial(ieee33)
        assert report.ok and report.n_branch == 32

    def test_default_limits(self, ieee33):
        assert all(math.isinf(b.pl_max) and math.isinf(b.i_max) for b in ieee33.branches)
        s = ieee33.slack_limits
        assert (s.p_min, s.p_max, s.q_min, s.q_max) == (-10, 10, -10, 10)

    def test_load_case_dispatch(self, tmp_path):
        assert load_case("builtin:ieee33").n_bus == 33
        with pytest.raises(CaseFormatError, match="unknown builtin"):
            load_case("builtin:ieee999")
        with pytest.raises(FileNotFoundError):
            load_case(str(tmp_path / "missing.m"))


class TestParse:
    def test_minimal(self):
        case = parse_case(small_text())
        assert case.n_bus == 3
        assert case.bus(3).p_load == 0.2
        assert case.slack_limits.p_max == 5

    def test_round_trip_is_exact(self, ieee33):
        again = parse_case(serialize_case(ieee33), name=ieee33.name)
        assert again == ieee33

    def test_round_trip_keeps_limits_and_dg(self):
        case = parse_case(small_text()).with_bus_values(p_dg={3: 0.15})
        import dataclasses
        brs = (dataclasses.replace(case.branches[0], pl_max=2.0, i_max=1.5),) + case.branches[1:]
        case = dataclasses.replace(case, branches=brs)
        assert parse_case(serialize_case(case), name=case.name) == case

    def test_rate_a_maps_to_limits(self):
        text = small_text().replace("1 2 0.01 0.02 0 0 0", "1 2 0.01 0.02 0 4 0")
        br = parse_case(text).branches[0]
        assert (br.pl_max, br.ql_max, br.i_max) == (4, 4, 4)

    def test_branch_limits_block(self):
        text = small_text("mpc.branch_limits = [\n 2 0 0.5;\n 0 0 0;\n];")
        b1, b2 = parse_case(text).branches
        assert (b1.pl_max, b1.ql_max, b1.i_max) == (2, math.inf, 0.5)
        assert math.isinf(b2.pl_max)

    def test_non_slack_gen_becomes_injection(self):
        text = small_text().replace("    1 0 0 5 -5 1 1 1 5 -5;",
                                    "    1 0 0 5 -5 1 1 1 5 -5;\n    3 0.3 0 0 0 1 1 1 0 0;")
        assert parse_case(text).bus(3).p_dg == 0.3

    def test_ignored_columns_warn(self):
        text = small_text().replace("2 1 0.1 0.05 0 0", "2 1 0.1 0.05 0.01 0")
        with pytest.warns(UserWarning, match="Gs/Bs"):
            parse_case(text)

    def test_clean_file_does_not_warn(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            parse_case(builtin_ieee33_text())

    @pytest.mark.parametrize("mutate, message", [
        (lambda t: t.replace("mpc.baseMVA = 1;", ""), "baseMVA"),
        (lambda t: t.replace("mpc.gen", "mpc.gens"), "'gen'"),
        (lambda t: t.replace("3 1 0.2", "2 1 0.2"), "duplicate bus id"),
        (lambda t: t.replace("1 3 0 0", "1 1 0 0"), "no slack bus"),
        (lambda t: t.replace("2 1 0.1", "2 3 0.1"), "multiple slack buses"),
        (lambda t: t.replace("2 3 0.02", "2 7 0.02"), "unknown bus"),
        (lambda t: t.replace("2 1 0.1 0.05", "2 1 -0.1 0.05"), "negative active load"),
        (lambda t: t.replace("2 3 0.02 0.03", "2 3 0 0"), "zero impedance"),
        (lambda t: t.replace("2 1 0.1 0.05 0 0 1 1 0 11 1", "2 1 0.1 0.05 0 0 1 1 0 11"),
         "columns"),
        (lambda t: t.replace("3 1 0.2 0.1", "3 2 0.2 0.1"), "unsupported bus type"),
    ])
    def test_format_errors(self, mutate, message):
        with pytest.raises(CaseFormatError, match=message):
            parse_case(mutate(small_text()))

    def test_error_carries_line_number(self):
        text = small_text().replace("3 1 0.2 0.1", "3 1 -0.2 0.1")
        with pytest.raises(CaseFormatError) as info:
            parse_case(text)
        assert info.value.line == 7


class TestCaseModel:
    def test_with_bus_values_is_pure(self, ieee33):
        changed = ieee33.with_bus_values(p_load={5: 1.0})
        assert changed.bus(5).p_load == 1.0
        assert ieee33.bus(5).p_load == 0.06

    def test_scaled_loads(self, ieee33):
        zero = ieee33.scaled_loads(0.0)
        assert zero.total_p_load == 0 and zero.total_q_load == 0

    def test_arrays_are_read_only(self, ieee33):
        with pytest.raises(ValueError):
            ieee33.p_load[0] = 1.0


def _union_find_is_tree(n, edges):
    parent = list(range(n + 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for u, v in edges:
        ru, rv = find(u), find(v)
        if ru == rv:
            return False
        parent[ru] = rv
    return len(edges) == n - 1 and len({find(k) for k in range(1, n + 1)}) == 1


edge_sets = st.integers(2, 9).flatmap(lambda n: st.tuples(
    st.just(n),
    st.lists(st.tuples(st.integers(1, n), st.integers(1, n)).filter(lambda e: e[0] != e[1]),
             min_size=0, max_size=2 * n)))


@settings(max_examples=150, deadline=None)
@given(edge_sets)
def test_radial_check_agrees_with_union_find(data):
    n, edges = data
    from radial_dg.case import BusRecord
    buses = [BusRecord(1, BusKind.SLACK, 0, 0)] + [BusRecord(k, BusKind.PQ, 0, 0)
                                                  for k in range(2, n + 1)]
    branches = [BranchRecord(u, v, 0.01, 0.01) for u, v in edges]
    case = NetworkCase(1.0, tuple(buses), tuple(branches))
    assert validate_radial(case).ok == _union_find_is_tree(n, edges)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 100), min_size=1, max_size=12))
def test_random_trees_are_radial(seeds):
    parents = [1 + s % (k + 1) for k, s in enumerate(seeds)]
    m = len(parents)
    case = make_case(parents, [0.01] * m, [0.01] * m, [0.0] * m, [0.0] * m)
    assert validate_radial(case).ok
    # Dropping any branch disconnects the tree.
    import dataclasses
    cut = dataclasses.replace(case.branches[0], in_service=False)
    broken = dataclasses.replace(case, branches=(cut,) + case.branches[1:])
    report = validate_radial(broken)
    assert not report.connected and report.unreachable
    assert np.all(np.asarray(report.unreachable) > 1)
