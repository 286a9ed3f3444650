"""scikit-learn style front ends for the two stages.

Both estimators take a :class:`~radial_dg.case.NetworkCase` (or a case source
string) where scikit-learn would take ``X``; ``y`` is accepted and ignored so
they slot into the usual tooling (``get_params``, ``clone``, ``set_params``).
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .allocation import (MARGIN_WEIGHTED, AllocationConfig, apply_dg, check_weights,
                         run_monte_carlo)
from .loadability import (DEFAULT_LAMBDA_STEP, STAGE1_V_MAX, STAGE1_V_MIN, ConstraintSet,
                          network_loadability, rank_candidates, simultaneous_loadability)
from .validation import check_band, check_case, check_positive


# transform() returns candidates, not a feature matrix, so set_output wrapping is off.
class LoadabilityAnalyzer(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Per-bus and simultaneous active loadability of a radial feeder.

    Parameters
    ----------
    lambda_step : float
        Load multiplier increment of the scan.
    v_bounds : (float, float)
        Voltage band enforced during the scan.
    n_candidates : int
        How many top-ranked buses :meth:`transform` returns.

    Attributes
    ----------
    records_ : list of LoadabilityRecord
    simultaneous_ : SimultaneousLoadability
    candidates_ : list of (bus, additional_mw)
    """

    def __init__(self, lambda_step=DEFAULT_LAMBDA_STEP, v_bounds=(STAGE1_V_MIN, STAGE1_V_MAX),
                 n_candidates=10, n_jobs=None):
        self.lambda_step = lambda_step
        self.v_bounds = v_bounds
        self.n_candidates = n_candidates
        self.n_jobs = n_jobs

    def fit(self, case, y=None):
        case = check_case(case)
        check_positive(self.lambda_step, "lambda_step")
        check_positive(self.n_candidates, "n_candidates", integer=True)
        lo, hi = check_band(self.v_bounds)
        cs = ConstraintSet.from_case(case, lo, hi)
        self.records_ = network_loadability(case, self.lambda_step, cs, n_jobs=self.n_jobs)
        self.simultaneous_ = simultaneous_loadability(case, self.lambda_step, cs)
        self.candidates_ = rank_candidates(self.records_, min(self.n_candidates,
                                                              len(self.records_)))
        return self

    def transform(self, case=None):
        """Candidate buses and their additional MW as an ``(n, 2)`` array."""
        check_is_fitted(self, "candidates_")
        return np.array(self.candidates_, dtype=float).reshape(-1, 2)

    @property
    def penetration_cap_(self) -> float:
        check_is_fitted(self, "simultaneous_")
        return self.simultaneous_.total_mw


class MonteCarloDGAllocator(TransformerMixin, BaseEstimator, auto_wrap_output_keys=None):
    """Monte Carlo siting and sizing of unity-pf PV units.

    ``fit`` runs Stage 1 first unless ``candidates`` are passed in. With
    ``penetration_cap="auto"`` the total DG size is capped at the feeder's
    simultaneous loadability from Stage 1; ``None`` disables the cap.
    :meth:`transform` returns the case with the best units installed.
    """

    def __init__(self, n_dg=1, n_trials=20000, dg_size_bounds=(0.1, 3.5),
                 penetration_cap="auto", weights=(0.5, 0.5), sampling=MARGIN_WEIGHTED,
                 v_bounds=(0.95, 1.05), n_candidates=10, lambda_step=DEFAULT_LAMBDA_STEP,
                 random_state=0, n_jobs=None):
        self.n_dg = n_dg
        self.n_trials = n_trials
        self.dg_size_bounds = dg_size_bounds
        self.penetration_cap = penetration_cap
        self.weights = weights
        self.sampling = sampling
        self.v_bounds = v_bounds
        self.n_candidates = n_candidates
        self.lambda_step = lambda_step
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, case, y=None, candidates=None, penetration_cap=None):
        """Search placements on ``case``.

        ``candidates`` is a sequence of ``(bus, additional_mw)`` pairs as
        produced by :meth:`LoadabilityAnalyzer.transform`.
        """
        case = check_case(case)
        check_weights(self.weights)
        check_positive(self.n_trials, "n_trials", integer=True)
        check_positive(self.n_dg, "n_dg", integer=True)
        cap = self.penetration_cap
        if candidates is None or (cap == "auto" and penetration_cap is None):
            stage1 = LoadabilityAnalyzer(self.lambda_step, n_candidates=self.n_candidates,
                                         n_jobs=self.n_jobs).fit(case)
            self.stage1_ = stage1
            if candidates is None:
                candidates = stage1.candidates_
            if cap == "auto":
                penetration_cap = stage1.penetration_cap_
        if cap == "auto":
            cap = penetration_cap
        candidates = [(int(b), float(m)) for b, m in candidates]
        seed = self.random_state if self.random_state is not None else 0
        self.config_ = AllocationConfig(
            candidate_buses=tuple(b for b, _ in candidates),
            candidate_margins=tuple(m for _, m in candidates),
            n_dg=self.n_dg, trials=self.n_trials, dg_size_bounds=tuple(self.dg_size_bounds),
            total_penetration_cap=cap, weights=tuple(self.weights), sampling=self.sampling,
            seed=int(seed), v_bounds=check_band(self.v_bounds))
        self.result_ = run_monte_carlo(case, self.config_, n_jobs=self.n_jobs)
        self.best_ = self.result_.best
        self.archive_ = self.result_.archive
        return self

    def transform(self, case):
        check_is_fitted(self, "best_")
        return apply_dg(check_case(case), self.best_.dgs)
