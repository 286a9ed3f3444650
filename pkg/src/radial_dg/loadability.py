"""Stage 1: additional active loading capacity per bus and for the whole feeder.

The sweep raises the active load at one bus (or all buses together) by a fixed
multiplier step and stops at the first step where the power flow diverges or
any operating constraint is violated. Reactive loads stay at base.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .case import NetworkCase, SlackLimits
from .powerflow import DEFAULT_MAX_ITER, DEFAULT_TOL, NonConvergence, PowerFlowSolution, solve

DEFAULT_LAMBDA_STEP = 0.01
STAGE1_V_MIN = 0.90
STAGE1_V_MAX = 1.05
# Guard against unbounded sweeps on cases with no binding constraint.
MAX_SWEEP_STEPS = 1_000_000

_EPS = 1e-12


class BaseCaseInfeasible(RuntimeError):
    pass


@dataclass(frozen=True)
class ConstraintSet:
    """Operating limits checked against a power-flow solution.

    Arrays are aligned with the case's bus and branch order. ``inf`` marks an
    unbounded limit.
    """

    v_min: np.ndarray
    v_max: np.ndarray
    pl_max: np.ndarray
    ql_max: np.ndarray
    i_max: np.ndarray
    slack: SlackLimits

    @classmethod
    def from_case(cls, case: NetworkCase, v_min: float | None = None,
                  v_max: float | None = None) -> ConstraintSet:
        """Limits stored in ``case``; ``v_min``/``v_max`` override every bus band."""
        n = case.n_bus
        lo = np.full(n, v_min) if v_min is not None else np.array([b.v_min for b in case.buses])
        hi = np.full(n, v_max) if v_max is not None else np.array([b.v_max for b in case.buses])
        if np.any(lo >= hi):
            raise ValueError("voltage band must satisfy v_min < v_max")
        return cls(
            v_min=lo, v_max=hi,
            pl_max=np.array([br.pl_max for br in case.branches], dtype=float),
            ql_max=np.array([br.ql_max for br in case.branches], dtype=float),
            i_max=np.array([br.i_max for br in case.branches], dtype=float),
            slack=case.slack_limits,
        )

    @classmethod
    def stage1(cls, case: NetworkCase) -> ConstraintSet:
        return cls.from_case(case, STAGE1_V_MIN, STAGE1_V_MAX)


@dataclass(frozen=True)
class Violation:
    kind: str          # v_min, v_max, pl_max, ql_max, i_max, slack_p, slack_q
    element: str       # "bus 18", "branch 6-7", "slack"
    value: float
    limit: float

    @property
    def margin(self) -> float:
        """Amount by which the limit is exceeded (positive)."""
        return abs(self.value - self.limit)

    def __str__(self) -> str:
        return f"{self.kind} at {self.element}"


@dataclass(frozen=True)
class ConstraintCheck:
    passed: bool
    violations: tuple[Violation, ...] = ()

    @property
    def first(self) -> Violation | None:
        return self.violations[0] if self.violations else None

    def __bool__(self) -> bool:
        return self.passed


def check_constraints(sol: PowerFlowSolution, cs: ConstraintSet,
                      case: NetworkCase | None = None) -> ConstraintCheck:
    """Test voltages, branch flows, currents and slack injection against ``cs``.

    Violations are listed in a fixed order: voltages (low, then high) by bus,
    then branch active flow, reactive flow and current by branch, then the
    slack active and reactive injection. ``case`` is only used to label
    branches by their end buses.
    """
    out: list[Violation] = []
    vm = sol.v_mag
    ids = sol.bus_ids
    for k in np.flatnonzero(vm < cs.v_min - _EPS):
        out.append(Violation("v_min", f"bus {ids[k]}", float(vm[k]), float(cs.v_min[k])))
    for k in np.flatnonzero(vm > cs.v_max + _EPS):
        out.append(Violation("v_max", f"bus {ids[k]}", float(vm[k]), float(cs.v_max[k])))

    def label(k):
        if case is None:
            return f"branch #{k + 1}"
        br = case.branches[k]
        return f"branch {br.from_bus}-{br.to_bus}"

    # Both terminal flows are bounded symmetrically.
    p_end = np.maximum(np.abs(sol.pl_from), np.abs(sol.pl_to))
    q_end = np.maximum(np.abs(sol.ql_from), np.abs(sol.ql_to))
    for kind, values, limit in (("pl_max", p_end, cs.pl_max), ("ql_max", q_end, cs.ql_max),
                                ("i_max", sol.branch_current, cs.i_max)):
        for k in np.flatnonzero(values > limit + _EPS):
            out.append(Violation(kind, label(k), float(values[k]), float(limit[k])))

    s = cs.slack
    if not s.p_min - _EPS <= sol.slack_p <= s.p_max + _EPS:
        bound = s.p_max if sol.slack_p > s.p_max else s.p_min
        out.append(Violation("slack_p", "slack", sol.slack_p, bound))
    if not s.q_min - _EPS <= sol.slack_q <= s.q_max + _EPS:
        bound = s.q_max if sol.slack_q > s.q_max else s.q_min
        out.append(Violation("slack_q", "slack", sol.slack_q, bound))
    return ConstraintCheck(not out, tuple(out))


@dataclass(frozen=True)
class LoadabilityRecord:
    bus: int
    base_mw: float
    lambda_max: float
    additional_mw: float
    binding: str
    steps: int = 0


def _evaluate(case, cs, p_load, tol, max_iter, v0=None):
    try:
        sol = solve(case, tol, max_iter, p_load=p_load, v0=v0)
    except NonConvergence:
        return False, "nonconvergence", None
    check = check_constraints(sol, cs, case)
    return check.passed, "" if check.passed else str(check.first), sol


def _sweep(case, cs, loads_at, tol, max_iter, max_steps=MAX_SWEEP_STEPS) -> tuple[int, str]:
    """Largest k >= 0 for which ``loads_at(k)`` is feasible, scanning k = 0, 1, ...

    Returns (k, reason the scan stopped). Raises BaseCaseInfeasible when k = 0
    already fails. Each step starts Newton-Raphson from the previous step's
    voltages; the base point starts flat.
    """
    ok, reason, sol = _evaluate(case, cs, loads_at(0), tol, max_iter)
    if not ok:
        raise BaseCaseInfeasible(reason)
    k = 0
    while k < max_steps:
        ok, reason, nxt = _evaluate(case, cs, loads_at(k + 1), tol, max_iter, sol.voltage)
        if not ok:
            return k, reason
        sol = nxt
        k += 1
    return k, "step limit"


def bus_loadability(case: NetworkCase, bus: int, lambda_step: float = DEFAULT_LAMBDA_STEP,
                    cs: ConstraintSet | None = None, relaxed_v_min: float | None = None,
                    *, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                    raise_on_base: bool = True) -> LoadabilityRecord:
    """Scan lambda = 1, 1 + step, ... on the active load of ``bus``.

    ``lambda_max`` is the last grid point at which the power flow converges
    and every constraint holds; the next grid point fails. A bus with zero
    base load is probed additively in quanta of ``lambda_step`` MW instead,
    and ``lambda_max`` then counts those quanta as 1 + k * step.

    ``cs`` defaults to the Stage-1 set (0.90-1.05 p.u. band);
    ``relaxed_v_min`` lowers or raises the voltage floor of ``cs``.
    """
    if lambda_step <= 0:
        raise ValueError("lambda_step must be positive")
    if cs is None:
        cs = ConstraintSet.stage1(case)
    if relaxed_v_min is not None:
        cs = _with_floor(cs, relaxed_v_min)
    k_bus = case.index_of(bus)
    if case.buses[k_bus].kind.name != "PQ":
        raise ValueError(f"bus {bus} is not a load bus")
    base = case.p_load
    base_mw = float(base[k_bus])

    def loads_at(k):
        p = base.copy()
        if base_mw > 0:
            p[k_bus] = base_mw * (1.0 + k * lambda_step)
        else:
            p[k_bus] = k * lambda_step
        return p

    try:
        k, reason = _sweep(case, cs, loads_at, tol, max_iter)
    except BaseCaseInfeasible as exc:
        if raise_on_base:
            raise BaseCaseInfeasible(f"bus {bus}: base case infeasible ({exc})") from None
        return LoadabilityRecord(bus, base_mw, 1.0, 0.0, f"base-infeasible: {exc}", 0)
    lam = 1.0 + k * lambda_step
    extra = (lam - 1.0) * base_mw if base_mw > 0 else k * lambda_step
    return LoadabilityRecord(bus, base_mw, lam, extra, reason, k)


def _with_floor(cs: ConstraintSet, v_min: float) -> ConstraintSet:
    from dataclasses import replace
    return replace(cs, v_min=np.full_like(cs.v_min, v_min))


def _pool_map(func, items, n_jobs):
    if n_jobs in (None, 1):
        return [func(item) for item in items]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=n_jobs)(delayed(func)(item) for item in items)


def network_loadability(case: NetworkCase, lambda_step: float = DEFAULT_LAMBDA_STEP,
                        cs: ConstraintSet | None = None, *, n_jobs: int | None = None,
                        tol: float = DEFAULT_TOL,
                        max_iter: int = DEFAULT_MAX_ITER) -> list[LoadabilityRecord]:
    """One record per load bus, each swept independently from the base case."""
    if cs is None:
        cs = ConstraintSet.stage1(case)
    buses = case.load_buses()

    def one(bus):
        return bus_loadability(case, bus, lambda_step, cs, tol=tol, max_iter=max_iter,
                               raise_on_base=False)

    return _pool_map(one, buses, n_jobs)


@dataclass(frozen=True)
class SimultaneousLoadability:
    lambda_max: float
    base_mw: float
    total_mw: float
    binding: str

    @property
    def additional_mw(self) -> float:
        return self.total_mw - self.base_mw


def simultaneous_loadability(case: NetworkCase, lambda_step: float = DEFAULT_LAMBDA_STEP,
                             cs: ConstraintSet | None = None, *, tol: float = DEFAULT_TOL,
                             max_iter: int = DEFAULT_MAX_ITER) -> SimultaneousLoadability:
    """Uniform multiplier on every bus's active load; total = sum(Pd) * lambda_max."""
    if lambda_step <= 0:
        raise ValueError("lambda_step must be positive")
    if cs is None:
        cs = ConstraintSet.stage1(case)
    base = case.p_load
    k, reason = _sweep(case, cs, lambda k: base * (1.0 + k * lambda_step), tol, max_iter)
    lam = 1.0 + k * lambda_step
    total = float(base.sum())
    return SimultaneousLoadability(lam, total, total * lam, reason)


def rank_candidates(records: list[LoadabilityRecord], n: int) -> list[tuple[int, float]]:
    """Top ``n`` buses by additional MW, descending; ties go to the lower bus id."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if n > len(records):
        warnings.warn(f"requested {n} candidates but only {len(records)} records exist",
                      stacklevel=2)
    ordered = sorted(records, key=lambda r: (-r.additional_mw, r.bus))
    return [(r.bus, r.additional_mw) for r in ordered[:n]]


def records_to_rows(records: list[LoadabilityRecord]) -> list[dict]:
    return [{"bus": r.bus, "base_mw": r.base_mw, "lambda_max": r.lambda_max,
             "additional_mw": r.additional_mw, "binding_constraint": r.binding}
            for r in records]
