"""Stage 2: Monte Carlo placement and sizing of unity-power-factor PV units.

Each trial draws distinct buses from the Stage-1 candidate pool and sizes
within per-unit bounds, runs the power flow on the modified feeder and keeps
the trial only if it converges inside the voltage band. The winner minimises

    F = w1 * f1 / f1_base + w2 * f2 / f2_base

where f1 is the summed voltage deviation, f2 the active loss and the
``*_base`` values are those of the feeder without DG. Dividing by the base
values makes the two terms dimensionless so the weights compare like with like.

Trial ``k`` draws all of its randomness from a PCG64 stream seeded with
``SeedSequence([seed, k])``, so results do not depend on evaluation order or on
how trials are split between workers.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .case import BusKind, NetworkCase
from .powerflow import NonConvergence, PowerFlowSolution, solve, total_active_loss

logger = logging.getLogger(__name__)

UNIFORM = "uniform"
MARGIN_WEIGHTED = "margin"
SAMPLING_SCHEMES = (UNIFORM, MARGIN_WEIGHTED)


class AllocationError(ValueError):
    pass


class SamplingError(RuntimeError):
    pass


class NoFeasibleTrial(RuntimeError):
    pass


@dataclass(frozen=True)
class DGUnit:
    bus: int
    p_mw: float


@dataclass(frozen=True)
class AllocationConfig:
    """Monte Carlo search settings.

    ``candidate_margins`` (Stage-1 additional MW, aligned with
    ``candidate_buses``) are required for margin-weighted sampling. A
    ``total_penetration_cap`` of ``None`` means no cap.
    """

    candidate_buses: tuple[int, ...]
    candidate_margins: tuple[float, ...] | None = None
    n_dg: int = 1
    trials: int = 20000
    dg_size_bounds: tuple[float, float] = (0.1, 3.5)
    total_penetration_cap: float | None = None
    weights: tuple[float, float] = (0.5, 0.5)
    sampling: str = MARGIN_WEIGHTED
    seed: int = 0
    v_bounds: tuple[float, float] = (0.95, 1.05)
    max_redraws: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "candidate_buses", tuple(int(b) for b in self.candidate_buses))
        if self.candidate_margins is not None:
            object.__setattr__(self, "candidate_margins",
                               tuple(float(m) for m in self.candidate_margins))
        check_weights(self.weights)
        if self.n_dg < 1:
            raise AllocationError("n_dg must be at least 1")
        if self.trials < 1:
            raise AllocationError("trials must be at least 1")
        if len(set(self.candidate_buses)) != len(self.candidate_buses):
            raise AllocationError("candidate buses must be distinct")
        if len(self.candidate_buses) < self.n_dg:
            raise AllocationError(
                f"{self.n_dg} units need at least {self.n_dg} candidate buses, "
                f"got {len(self.candidate_buses)}")
        lo, hi = self.dg_size_bounds
        if not 0 <= lo <= hi:
            raise AllocationError("dg_size_bounds must satisfy 0 <= min <= max")
        if self.v_bounds[0] >= self.v_bounds[1]:
            raise AllocationError("v_bounds must satisfy min < max")
        if self.sampling not in SAMPLING_SCHEMES:
            raise AllocationError(f"sampling must be one of {SAMPLING_SCHEMES}")
        if self.sampling == MARGIN_WEIGHTED:
            m = self.candidate_margins
            if m is None or len(m) != len(self.candidate_buses):
                raise AllocationError("margin-weighted sampling needs one margin per candidate")
            m = np.asarray(m)
            if np.any(m < 0) or np.count_nonzero(m) < self.n_dg:
                raise AllocationError(
                    "margins must be non-negative with at least n_dg positive entries")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def check_weights(weights: Sequence[float]) -> None:
    """Weights must be two values in [0, 1] that sum to one."""
    if len(weights) != 2:
        raise AllocationError("exactly two weights are required")
    w1, w2 = weights
    if not (0 <= w1 <= 1 and 0 <= w2 <= 1) or abs(w1 + w2 - 1) > 1e-12:
        raise AllocationError(f"weights {tuple(weights)} must lie in [0, 1] and sum to 1")


@dataclass(frozen=True)
class TrialResult:
    dgs: tuple[DGUnit, ...]
    f1: float
    f2: float
    f_obj: float
    v_min: float
    v_min_bus: int
    feasible: bool
    trial_index: int = -1
    reason: str = ""
    slack_p: float = float("nan")

    @property
    def buses(self) -> tuple[int, ...]:
        return tuple(d.bus for d in self.dgs)

    @property
    def sizes(self) -> tuple[float, ...]:
        return tuple(d.p_mw for d in self.dgs)

    @property
    def total_dg_mw(self) -> float:
        return float(sum(d.p_mw for d in self.dgs))


def apply_dg(case: NetworkCase, dgs: Sequence[DGUnit]) -> NetworkCase:
    """New case with each unit's output added to its bus's active injection."""
    if not dgs:
        return case
    seen: set[int] = set()
    extra: dict[int, float] = {}
    for d in dgs:
        try:
            bus = case.bus(d.bus)
        except KeyError:
            raise AllocationError(f"DG at unknown bus {d.bus}") from None
        if bus.kind is BusKind.SLACK:
            raise AllocationError(f"DG at slack bus {d.bus}")
        if d.bus in seen:
            raise AllocationError(f"duplicate bus {d.bus} in DG set")
        seen.add(d.bus)
        extra[d.bus] = bus.p_dg + d.p_mw
    return case.with_bus_values(p_dg=extra)


def voltage_deviation(sol: PowerFlowSolution) -> float:
    return float(np.sum(np.abs(sol.v_mag - 1.0)))


def objective(f1: float, f2: float, weights: Sequence[float],
              normalizers: Sequence[float]) -> float:
    check_weights(weights)
    f1_base, f2_base = normalizers
    if f1_base <= 0 or f2_base <= 0:
        raise AllocationError("normalizers must be positive")
    return weights[0] * (f1 / f1_base) + weights[1] * (f2 / f2_base)


def trial_rng(seed: int, trial_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, trial_index])))


def sample_trial(rng: np.random.Generator, config: AllocationConfig) -> list[DGUnit]:
    """Draw one placement: distinct buses, then sizes under the penetration cap.

    A draw whose total size exceeds the cap is discarded and redrawn in full,
    up to ``config.max_redraws`` times.
    """
    pool = np.asarray(config.candidate_buses)
    p = None
    if config.sampling == MARGIN_WEIGHTED:
        m = np.asarray(config.candidate_margins, dtype=float)
        p = m / m.sum()
    lo, hi = config.dg_size_bounds
    cap = config.total_penetration_cap
    for _ in range(config.max_redraws):
        buses = rng.choice(pool, size=config.n_dg, replace=False, p=p)
        sizes = rng.uniform(lo, hi, size=config.n_dg)
        if cap is None or sizes.sum() <= cap:
            return [DGUnit(int(b), float(s)) for b, s in zip(buses, sizes)]
    raise SamplingError(
        f"no draw satisfied the {cap} MW penetration cap in {config.max_redraws} attempts; "
        "size bounds are inconsistent with the cap")


@dataclass(frozen=True)
class BaseReference:
    f1: float
    f2: float
    solution: PowerFlowSolution

    @property
    def normalizers(self) -> tuple[float, float]:
        return self.f1, self.f2


def base_reference(case: NetworkCase) -> BaseReference:
    sol = solve(case)
    return BaseReference(voltage_deviation(sol), total_active_loss(sol, case), sol)


def evaluate_trial(case: NetworkCase, dgs: Sequence[DGUnit], config: AllocationConfig,
                   normalizers: Sequence[float] | None = None,
                   trial_index: int = -1) -> TrialResult:
    """Power flow on ``case`` plus ``dgs``; infeasibility is reported, never raised."""
    dgs = tuple(dgs)
    if normalizers is None:
        normalizers = base_reference(case).normalizers
    nan = float("nan")

    def rejected(reason, v=nan, bus=-1):
        return TrialResult(dgs, nan, nan, nan, v, bus, False, trial_index, reason)

    lo, hi = config.dg_size_bounds
    for d in dgs:
        if not lo <= d.p_mw <= hi:
            return rejected(f"DG size {d.p_mw:.4f} MW at bus {d.bus} outside bounds")
    try:
        sol = solve(apply_dg(case, dgs))
    except NonConvergence as exc:
        return rejected(f"power flow diverged: {exc}")
    v_min, v_bus = sol.v_min()
    vlo, vhi = config.v_bounds
    if v_min < vlo or sol.v_mag.max() > vhi:
        k = int(np.argmax(sol.v_mag))
        reason = (f"undervoltage {v_min:.4f} at bus {v_bus}" if v_min < vlo
                  else f"overvoltage {sol.v_mag[k]:.4f} at bus {sol.bus_ids[k]}")
        return rejected(reason, v_min, v_bus)
    f1 = voltage_deviation(sol)
    f2 = total_active_loss(sol, case)
    return TrialResult(dgs, f1, f2, objective(f1, f2, config.weights, normalizers), v_min, v_bus,
                       True, trial_index, "", sol.slack_p)


@dataclass(frozen=True)
class MonteCarloResult:
    best: TrialResult
    archive: tuple[TrialResult, ...]
    n_trials: int
    base: BaseReference = field(repr=False)

    def __iter__(self):
        yield self.best
        yield self.archive

    @property
    def feasibility_rate(self) -> float:
        return len(self.archive) / self.n_trials


def _run_chunk(case, config, normalizers, indices) -> list[TrialResult]:
    out = []
    for k in indices:
        dgs = sample_trial(trial_rng(config.seed, k), config)
        out.append(evaluate_trial(case, dgs, config, normalizers, trial_index=k))
    return out


def run_trials(case: NetworkCase, config: AllocationConfig, normalizers,
               indices: Sequence[int], n_jobs: int | None = None) -> list[TrialResult]:
    """Evaluate the given trial indices, optionally across joblib workers."""
    indices = list(indices)
    if n_jobs in (None, 1) or len(indices) < 2:
        return _run_chunk(case, config, normalizers, indices)
    from joblib import Parallel, delayed, effective_n_jobs
    workers = effective_n_jobs(n_jobs)
    chunks = [c.tolist() for c in np.array_split(np.array(indices), workers * 4) if len(c)]
    parts = Parallel(n_jobs=n_jobs)(
        delayed(_run_chunk)(case, config, normalizers, c) for c in chunks)
    return [r for part in parts for r in part]


def select_best(results: Sequence[TrialResult]) -> TrialResult | None:
    """Lowest objective among feasible trials; ties go to the earliest trial."""
    best = None
    for r in results:
        if r.feasible and (best is None or (r.f_obj, r.trial_index) < (best.f_obj, best.trial_index)):
            best = r
    return best


def run_monte_carlo(case: NetworkCase, config: AllocationConfig,
                    n_jobs: int | None = None) -> MonteCarloResult:
    """Evaluate ``config.trials`` random placements and return the best feasible one.

    Raises :class:`NoFeasibleTrial` when no trial converges inside the band.
    """
    base = base_reference(case)
    results = run_trials(case, config, base.normalizers, range(config.trials), n_jobs)
    archive = tuple(r for r in results if r.feasible)
    best = select_best(archive)
    if best is None:
        raise NoFeasibleTrial(
            f"none of {config.trials} trials was feasible; widen the DG size bounds, "
            "the voltage band or the candidate set")
    logger.info("Monte Carlo: %d/%d feasible, best F=%.6f at %s", len(archive), config.trials,
                best.f_obj, best.buses)
    return MonteCarloResult(best, archive, config.trials, base)
