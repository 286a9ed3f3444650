"""Full AC power flow by Newton-Raphson in polar coordinates."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .case import BranchRecord, BusKind, NetworkCase

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, mismatch: float):
        self.iterations = iterations
        self.mismatch = mismatch
        super().__init__(
            f"power flow did not converge after {iterations} iterations "
            f"(max mismatch {mismatch:.3e} p.u.)")


@dataclass(frozen=True)
class _Topology:
    ybus: np.ndarray
    f: np.ndarray            # bus positions, in-service branches only
    t: np.ndarray
    live: np.ndarray         # indices into case.branches
    y_series: np.ndarray
    y_shunt_half: np.ndarray
    r: np.ndarray


@lru_cache(maxsize=64)
def _topology(branches: tuple[BranchRecord, ...], positions: tuple[int, ...]) -> _Topology:
    pos = {bus_id: k for k, bus_id in enumerate(positions)}
    n = len(positions)
    live = np.array([k for k, br in enumerate(branches) if br.in_service], dtype=int)
    used = [branches[k] for k in live]
    f = np.array([pos[br.from_bus] for br in used], dtype=int)
    t = np.array([pos[br.to_bus] for br in used], dtype=int)
    ys = np.array([br.series_admittance for br in used], dtype=complex)
    ysh = np.array([0.5j * br.b_shunt for br in used], dtype=complex)
    ybus = np.zeros((n, n), dtype=complex)
    np.add.at(ybus, (f, f), ys + ysh)
    np.add.at(ybus, (t, t), ys + ysh)
    np.add.at(ybus, (f, t), -ys)
    np.add.at(ybus, (t, f), -ys)
    for arr in (ybus, f, t, live, ys, ysh):
        arr.setflags(write=False)
    r = np.array([br.r for br in used])
    return _Topology(ybus, f, t, live, ys, ysh, r)


def topology(case: NetworkCase) -> _Topology:
    cache = case.solver_cache
    if "topology" not in cache:
        cache["topology"] = _topology(case.branches, tuple(b.id for b in case.buses))
    return cache["topology"]


def _bus_roles(case: NetworkCase) -> tuple[np.ndarray, int]:
    cache = case.solver_cache
    if "roles" not in cache:
        kinds = [b.kind for b in case.buses]
        pq = np.array([k for k, kind in enumerate(kinds) if kind is BusKind.PQ], dtype=int)
        cache["roles"] = (pq, kinds.index(BusKind.SLACK))
    return cache["roles"]


@dataclass(frozen=True)
class PowerFlowSolution:
    """Converged operating point. Flows are MW/MVAr, currents p.u.

    ``pl_from``/``ql_from`` are the flows leaving the from-bus terminal of
    each branch (in case order), ``pl_to``/``ql_to`` the flows leaving the
    to-bus terminal. Out-of-service branches carry zeros.
    """

    bus_ids: np.ndarray
    v_mag: np.ndarray
    v_ang: np.ndarray
    slack_p: float
    slack_q: float
    pl_from: np.ndarray
    ql_from: np.ndarray
    pl_to: np.ndarray
    ql_to: np.ndarray
    branch_current: np.ndarray
    p_loss_total: float
    q_loss_total: float
    iterations: int
    converged: bool = True
    max_mismatch: float = 0.0

    @property
    def voltage(self) -> np.ndarray:
        return self.v_mag * np.exp(1j * self.v_ang)

    def v_min(self) -> tuple[float, int]:
        k = int(np.argmin(self.v_mag))
        return float(self.v_mag[k]), int(self.bus_ids[k])


def injections(case: NetworkCase, p_load=None, q_load=None) -> np.ndarray:
    """Scheduled complex injection per bus in p.u. (generation minus load)."""
    p = case.p_load if p_load is None else p_load
    q = case.q_load if q_load is None else q_load
    return ((case.p_dg - p) - 1j * q) / case.base_mva


def mismatch(ybus: np.ndarray, v: np.ndarray, s_sched: np.ndarray) -> np.ndarray:
    """Complex nodal mismatch S_calc - S_sched for every bus."""
    return v * np.conj(ybus @ v) - s_sched


def power_jacobian(ybus: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of complex bus injections w.r.t. angle and magnitude."""
    ibus = ybus @ v
    vnorm = v / np.abs(v)
    ds_dva = 1j * v[:, None] * np.conj(np.diag(ibus) - ybus * v[None, :])
    ds_dvm = v[:, None] * np.conj(ybus * vnorm[None, :]) + np.diag(np.conj(ibus) * vnorm)
    return ds_dva, ds_dvm


def _jacobian(ybus, v, pq, out=None):
    ds_dva, ds_dvm = power_jacobian(ybus, v)
    n = len(pq)
    a = ds_dva[pq][:, pq]
    m = ds_dvm[pq][:, pq]
    jac = np.empty((2 * n, 2 * n)) if out is None else out
    jac[:n, :n] = a.real
    jac[:n, n:] = m.real
    jac[n:, :n] = a.imag
    jac[n:, n:] = m.imag
    return jac


def newton_raphson(ybus: np.ndarray, s_sched: np.ndarray, v0: np.ndarray, pq: np.ndarray,
                   tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
    """Return (voltage, iterations, final max mismatch); raise NonConvergence."""
    v = v0.astype(complex)
    va = np.angle(v)
    vm = np.abs(v)
    npq = len(pq)
    f = np.empty(2 * npq)
    jac = np.empty((2 * npq, 2 * npq))

    def residual(v):
        mis = mismatch(ybus, v, s_sched)[pq]
        f[:npq] = mis.real
        f[npq:] = mis.imag
        return np.max(np.abs(f)) if npq else 0.0

    norm = residual(v)
    it = 0
    while norm >= tol:
        if it >= max_iter or not np.isfinite(norm):
            raise NonConvergence(it, float(norm))
        it += 1
        _jacobian(ybus, v, pq, jac)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise NonConvergence(it, float(norm)) from None
        va[pq] += dx[:npq]
        vm[pq] += dx[npq:]
        v = vm * np.exp(1j * va)
        norm = residual(v)
    if np.any(vm[pq] <= 0):
        raise NonConvergence(it, float(norm))
    return v, it, float(norm)


def solve(case: NetworkCase, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
          *, p_load=None, q_load=None, v0=None) -> PowerFlowSolution:
    """Solve the AC power flow, by default from a flat start.

    The slack bus is held at 1.0 p.u., angle 0; every other bus is a
    constant-power PQ bus. ``p_load``/``q_load`` optionally replace the
    case's per-bus loads (MW/MVAr, case bus order) without copying the case.
    ``v0`` is an optional complex starting point (slack entry is ignored).
    Raises :class:`NonConvergence` if the mismatch does not fall below ``tol``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    topo = topology(case)
    pq, slack = _bus_roles(case)
    s_sched = injections(case, p_load, q_load)
    start = np.ones(case.n_bus, complex)
    if v0 is not None:
        start[pq] = np.asarray(v0)[pq]
    v, iterations, norm = newton_raphson(topo.ybus, s_sched, start, pq, tol, max_iter)
    return _assemble(case, topo, v, slack, iterations, norm)


def _assemble(case, topo, v, slack, iterations, norm) -> PowerFlowSolution:
    base = case.base_mva
    s_bus = v * np.conj(topo.ybus @ v)
    vf, vt = v[topo.f], v[topo.t]
    i_series = topo.y_series * (vf - vt)
    s_from = vf * np.conj(i_series + topo.y_shunt_half * vf)
    s_to = vt * np.conj(-i_series + topo.y_shunt_half * vt)
    nbr = len(case.branches)
    out = {k: np.zeros(nbr) for k in ("pf", "qf", "pt", "qt", "i")}
    out["pf"][topo.live] = s_from.real * base
    out["qf"][topo.live] = s_from.imag * base
    out["pt"][topo.live] = s_to.real * base
    out["qt"][topo.live] = s_to.imag * base
    out["i"][topo.live] = np.abs(s_from) / np.abs(vf)
    loss = (s_from + s_to) * base
    for arr in out.values():
        arr.setflags(write=False)
    return PowerFlowSolution(
        bus_ids=case.bus_ids,
        v_mag=np.abs(v),
        v_ang=np.angle(v),
        slack_p=float(s_bus[slack].real * base),
        slack_q=float(s_bus[slack].imag * base),
        pl_from=out["pf"], ql_from=out["qf"], pl_to=out["pt"], ql_to=out["qt"],
        branch_current=out["i"],
        p_loss_total=float(loss.real.sum()),
        q_loss_total=float(loss.imag.sum()),
        iterations=iterations,
        max_mismatch=norm,
    )


@dataclass(frozen=True)
class BranchFlow:
    from_bus: int
    to_bus: int
    pl_mn: float
    ql_mn: float
    pl_nm: float
    ql_nm: float
    current: float
    in_service: bool


def line_flows(sol: PowerFlowSolution, case: NetworkCase) -> list[BranchFlow]:
    """Terminal flows of each branch from the solved voltages.

    With series admittance g + jb and V_m, V_n, theta_mn = theta_m - theta_n::

        PL_mn = g V_m^2 - g V_m V_n cos(theta_mn) - b V_m V_n sin(theta_mn)
        QL_mn = -(b + b_sh/2) V_m^2 + b V_m V_n cos(theta_mn) - g V_m V_n sin(theta_mn)
    """
    rows = []
    vm, va = sol.v_mag, sol.v_ang
    for br in case.branches:
        if not br.in_service:
            rows.append(BranchFlow(br.from_bus, br.to_bus, 0.0, 0.0, 0.0, 0.0, 0.0, False))
            continue
        y = br.series_admittance
        g, b = y.real, y.imag
        m, n = case.index_of(br.from_bus), case.index_of(br.to_bus)

        def ends(i, j):
            th = va[i] - va[j]
            vv = vm[i] * vm[j]
            p = g * vm[i] ** 2 - g * vv * np.cos(th) - b * vv * np.sin(th)
            q = -(b + br.b_shunt / 2) * vm[i] ** 2 + b * vv * np.cos(th) - g * vv * np.sin(th)
            return p, q

        pmn, qmn = ends(m, n)
        pnm, qnm = ends(n, m)
        current = np.hypot(pmn, qmn) / vm[m]
        rows.append(BranchFlow(br.from_bus, br.to_bus, pmn * case.base_mva, qmn * case.base_mva,
                               pnm * case.base_mva, qnm * case.base_mva, float(current), True))
    return rows


def total_active_loss(sol: PowerFlowSolution, case: NetworkCase) -> float:
    """Active loss in MW as sum of R (PL_mn^2 + QL_mn^2) / V_m^2 over branches.

    PL_mn, QL_mn are the flows entering the series element at the sending
    (from) end, so line-charging current is excluded and the result equals the
    flow-sum loss for any pi-model branch.
    """
    topo = topology(case)
    vm = sol.v_mag
    pos = topo.live
    p = sol.pl_from[pos] / case.base_mva
    # Remove the charging term, which carries reactive power only.
    q = sol.ql_from[pos] / case.base_mva + np.imag(topo.y_shunt_half) * vm[topo.f] ** 2
    return float(np.sum((p ** 2 + q ** 2) / vm[topo.f] ** 2 * topo.r) * case.base_mva)


def branch_currents(sol: PowerFlowSolution, case: NetworkCase) -> np.ndarray:
    """Sending-end current magnitude |S_mn| / |V_m| per branch in p.u.

    The sending end is the branch's from-bus. With line charging the two
    terminal currents differ; on a purely series branch they are equal, so
    swapping from/to labels leaves the value unchanged.
    """
    return sol.branch_current.copy()
