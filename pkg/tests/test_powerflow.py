import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_case, two_bus, two_bus_closed_form
from radial_dg.powerflow import (NonConvergence, branch_currents, line_flows, mismatch,
                                 power_jacobian, solve, topology, total_active_loss)


class TestTwoBusOracle:
    def test_reference_point(self):
        sol = solve(two_bus())
        expected = two_bus_closed_form(0.05, 0.05, 0.01, 0.0)
        assert abs(sol.v_mag[1] - expected) <= 1e-8
        assert sol.converged

    @settings(max_examples=60, deadline=None)
    @given(r=st.floats(0.001, 0.1), x=st.floats(0.001, 0.1),
           p=st.floats(0.0, 2.0), q=st.floats(-0.5, 1.0))
    def test_matches_closed_form(self, r, x, p, q):
        b = 2 * (r * p / 100 + x * q / 100) - 1
        # Keep to the branch of the nose curve the solver is meant to find.
        if b * b - 4 * (r * r + x * x) * ((p / 100) ** 2 + (q / 100) ** 2) < 0.2:
            return
        sol = solve(two_bus(r, x, p, q))
        assert abs(sol.v_mag[1] - two_bus_closed_form(r, x, p / 100, q / 100)) <= 1e-8

    def test_loss_is_i_squared_r(self):
        sol = solve(two_bus(p_mw=50.0, q_mvar=20.0))
        i2 = (0.5 ** 2 + 0.2 ** 2) / sol.v_mag[1] ** 2
        assert sol.p_loss_total == pytest.approx(0.05 * i2 * 100, rel=1e-8)
        assert sol.q_loss_total == pytest.approx(0.05 * i2 * 100, rel=1e-8)


class TestIeee33:
    def test_base_solution(self, ieee33):
        sol = solve(ieee33)
        v, bus = sol.v_min()
        assert bus == 18
        assert v == pytest.approx(0.91309, abs=1e-5)
        assert int(np.sum(sol.v_mag < 0.95)) == 21
        assert sol.iterations <= 5

    def test_mismatch_below_tolerance(self, ieee33):
        sol = solve(ieee33)
        topo = topology(ieee33)
        s = ((ieee33.p_dg - ieee33.p_load) - 1j * ieee33.q_load) / ieee33.base_mva
        mis = mismatch(topo.ybus, sol.voltage, s)[1:]
        assert np.max(np.abs(np.r_[mis.real, mis.imag])) < 1e-8

    def test_deterministic(self, ieee33):
        a, b = solve(ieee33), solve(ieee33)
        assert np.array_equal(a.v_mag, b.v_mag) and np.array_equal(a.v_ang, b.v_ang)

    def test_zero_load_is_flat(self, ieee33):
        sol = solve(ieee33.scaled_loads(0.0))
        assert np.allclose(sol.v_mag, 1.0, atol=1e-12)
        assert sol.p_loss_total == pytest.approx(0.0, abs=1e-12)
        assert sol.iterations == 0

    def test_slack_balance(self, ieee33):
        sol = solve(ieee33)
        assert sol.slack_p == pytest.approx(ieee33.total_p_load + sol.p_loss_total, abs=1e-6)
        assert sol.slack_q == pytest.approx(ieee33.total_q_load + sol.q_loss_total, abs=1e-6)

    def test_divergence_is_reported(self, ieee33):
        with pytest.raises(NonConvergence) as info:
            solve(ieee33.scaled_loads(20.0))
        assert info.value.iterations >= 1
        with pytest.raises(NonConvergence):
            solve(ieee33, max_iter=1)

    def test_bad_tolerance(self, ieee33):
        with pytest.raises(ValueError):
            solve(ieee33, tol=0)


def test_jacobian_matches_finite_differences(ieee33):
    ybus = topology(ieee33).ybus
    rng = np.random.default_rng(7)
    h = 1e-6
    n = ieee33.n_bus
    for _ in range(10):
        vm = rng.uniform(0.9, 1.1, n)
        va = rng.uniform(-0.2, 0.2, n)

        def s_of(m, a):
            v = m * np.exp(1j * a)
            return v * np.conj(ybus @ v)

        ds_dva, ds_dvm = power_jacobian(ybus, vm * np.exp(1j * va))
        fd_va = np.empty_like(ds_dva)
        fd_vm = np.empty_like(ds_dvm)
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            fd_va[:, k] = (s_of(vm, va + e) - s_of(vm, va - e)) / (2 * h)
            fd_vm[:, k] = (s_of(vm + e, va) - s_of(vm - e, va)) / (2 * h)
        for analytic, numeric in ((ds_dva, fd_va), (ds_dvm, fd_vm)):
            rel = np.linalg.norm(analytic - numeric) / np.linalg.norm(numeric)
            assert rel <= 1e-6


def test_loss_formula_matches_flow_sum(ieee33):
    rng = np.random.default_rng(11)
    for _ in range(100):
        p = ieee33.p_load * rng.uniform(0.2, 1.6, ieee33.n_bus)
        q = ieee33.q_load * rng.uniform(0.2, 1.6, ieee33.n_bus)
        sol = solve(ieee33, p_load=p, q_load=q)
        assert abs(total_active_loss(sol, ieee33) - sol.p_loss_total) <= 1e-6


def test_line_flows_agree_with_solver(ieee33):
    sol = solve(ieee33)
    flows = line_flows(sol, ieee33)
    assert np.allclose([f.pl_mn for f in flows], sol.pl_from, atol=1e-10)
    assert np.allclose([f.ql_mn for f in flows], sol.ql_from, atol=1e-10)
    assert np.allclose([f.pl_nm for f in flows], sol.pl_to, atol=1e-10)
    assert sum(f.pl_mn + f.pl_nm for f in flows) == pytest.approx(sol.p_loss_total, abs=1e-10)
    assert np.allclose([f.current for f in flows], branch_currents(sol, ieee33))


def test_line_charging_is_excluded_from_active_loss(ieee33):
    brs = tuple(dataclasses.replace(b, b_shunt=0.002) for b in ieee33.branches)
    charged = dataclasses.replace(ieee33, branches=brs)
    sol = solve(charged)
    assert abs(total_active_loss(sol, charged) - sol.p_loss_total) <= 1e-9
    flows = line_flows(sol, charged)
    assert np.allclose([f.ql_mn for f in flows], sol.ql_from, atol=1e-10)


def test_out_of_service_branch_carries_nothing(ieee33):
    # A tie switch left open: the extra branch must not change the solution.
    tie = dataclasses.replace(ieee33.branches[0], from_bus=18, to_bus=33, in_service=False)
    case = dataclasses.replace(ieee33, branches=ieee33.branches + (tie,))
    sol, ref = solve(case), solve(ieee33)
    assert np.array_equal(sol.v_mag, ref.v_mag)
    assert sol.pl_from[-1] == 0 and sol.branch_current[-1] == 0
    assert not line_flows(sol, case)[-1].in_service


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 50), st.floats(0.0, 0.3), st.floats(0.0, 0.2)),
                min_size=1, max_size=10))
def test_energy_balance_on_random_feeders(spec):
    parents = [1 + s % (k + 1) for k, (s, _, _) in enumerate(spec)]
    m = len(spec)
    case = make_case(parents, [0.01] * m, [0.008] * m, [p for _, p, _ in spec],
                     [q for _, _, q in spec], base_mva=1.0)
    sol = solve(case)
    assert sol.slack_p == pytest.approx(case.total_p_load + sol.p_loss_total, abs=1e-6)
    assert sol.slack_q == pytest.approx(case.total_q_load + sol.q_loss_total, abs=1e-6)
    assert sol.p_loss_total >= -1e-12
    assert abs(total_active_loss(sol, case) - sol.p_loss_total) <= 1e-9


def test_dg_injection_enters_the_balance(ieee33):
    case = ieee33.with_bus_values(p_dg={6: 2.0})
    sol = solve(case)
    assert sol.slack_p == pytest.approx(ieee33.total_p_load - 2.0 + sol.p_loss_total, abs=1e-6)
