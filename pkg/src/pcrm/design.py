"""Two-stage precision dose-finding state machine.

Stage I runs the one-sample CRM while covariate data accumulate. Reaching
the stage-one sample size rescales the dose labels from the posterior
toxicity estimates. Stage II then alternates, after every enrollment cohort,
a forward inclusion test and a backward removal test over the patient
criteria, doses each patient from the current joint fit, and finally emits
one MTD per pattern of the surviving covariates.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from . import estimation
from .core import (
    DesignConfig,
    DoseGrid,
    PatientRecord,
    Phase,
    SelectionEvent,
    TrialError,
    TrialState,
    clamp_no_skip,
)
from .crm import CrmRecommendation, crm_final_mtd, crm_recommend, toxicity_data
from .estimation import FittedModel


@dataclass(frozen=True)
class MtdTable:
    """Final dose recommendation per pattern of the selected covariates."""

    entries: tuple[tuple[tuple[int, ...], int], ...]
    selected: tuple[int, ...]
    model: FittedModel | None
    fallback: bool = False

    def __post_init__(self):
        want = 2 ** len(self.selected)
        if len(self.entries) != want:
            raise TrialError(f"expected {want} pattern rows, got {len(self.entries)}")

    def dose_for(self, covariates: Sequence[int]) -> int:
        """Recommended dose for a patient, restricted to the selected covariates."""
        key = tuple(covariates[m] for m in self.selected)
        for pattern, dose in self.entries:
            if pattern == key:
                return dose
        raise TrialError(f"no entry for pattern {key}")

    def to_dict(self) -> dict:
        return {
            "selected": list(self.selected),
            "fallback": self.fallback,
            "one_sample": self.model is None,
            "entries": [{"pattern": list(p), "dose": d} for p, d in self.entries],
            "model": None
            if self.model is None
            else {
                "dose_coef": self.model.dose_coef,
                "gammas": {str(k): (None if math.isnan(v) else v) for k, v in self.model.gammas.items()},
                "intercept": self.model.intercept,
                "converged": self.model.converged,
                "separation": self.model.separation,
            },
        }


@dataclass(frozen=True)
class CohortRecommendation:
    """Doses for the next cohort plus how they were chosen."""

    doses: tuple[int, ...]
    basis: str  # "start-dose" | "one-sample" | "covariate-model"
    crm: CrmRecommendation | None = None
    model: FittedModel | None = None


def inclusion_threshold(q: int, num_covariates: int, alpha: float) -> float:
    """Forward-selection cutoff with q covariates already selected."""
    if not 0 <= q <= num_covariates:
        raise TrialError("q must lie in 0..M")
    if num_covariates == 0:
        return 0.0
    return alpha * (num_covariates - q) / num_covariates


def exclusion_threshold(q: int, alpha: float) -> float:
    """Backward-elimination cutoff with q covariates currently selected."""
    if q < 1:
        raise TrialError("nothing to remove")
    return alpha / q


def choose_inclusion(
    pvalues: Mapping[int, float], q: int, num_covariates: int, alpha: float, conservative: bool = False
) -> tuple[int | None, float, int | None, float | None]:
    """Pick the best candidate and test it against the inclusion threshold.

    Returns (included index or None, threshold, best candidate, best p).
    """
    q_eff = q + 1 if conservative else q
    threshold = inclusion_threshold(min(q_eff, num_covariates), num_covariates, alpha)
    if not pvalues:
        return None, threshold, None, None
    best = min(pvalues, key=lambda m: (pvalues[m], m))
    best_p = pvalues[best]
    if best_p < threshold:
        return best, threshold, best, best_p
    return None, threshold, best, best_p


def choose_removal(pvalues: Mapping[int, float], alpha: float) -> tuple[int | None, float, int, float]:
    """Pick the worst selected covariate and test it against the exclusion cutoff."""
    if not pvalues:
        raise TrialError("nothing to remove")
    threshold = exclusion_threshold(len(pvalues), alpha)
    worst = max(pvalues, key=lambda m: (pvalues[m], -m))
    worst_p = pvalues[worst]
    if worst_p > threshold:
        return worst, threshold, worst, worst_p
    return None, threshold, worst, worst_p


def build_grid(config: DesignConfig) -> DoseGrid:
    if config.skeleton is not None:
        skeleton = np.asarray(config.skeleton, dtype=float)
    else:
        skeleton = estimation.calibrate_skeleton(
            config.target,
            config.doses,
            config.calibration_nu,
            config.calibration_delta,
            intercept=config.prior.intercept,
        )
    labels = estimation.dose_labels(skeleton, intercept=config.prior.intercept, prior_slope=1.0)
    return DoseGrid(
        levels=tuple(range(1, config.doses + 1)),
        skeleton=tuple(float(p) for p in skeleton),
        labels=tuple(float(x) for x in labels),
    )


def new_trial(config: DesignConfig) -> TrialState:
    return TrialState(config=config, grid=build_grid(config))


def _fit_columns(state: TrialState, columns: Sequence[int]) -> FittedModel:
    """Fixed-intercept fit of dose label plus the given covariate columns.

    Patients are aggregated to binomial counts per (dose level, pattern)
    cell first; the key space is J * 2^q so this is exact.
    """
    q = len(columns)
    n = state.n_patients
    keys = np.empty(n, dtype=np.int64)
    dlts = np.empty(n, dtype=np.float64)
    for i, rec in enumerate(state.patients):
        key = rec.dose_level - 1
        for m in columns:
            key = (key << 1) | rec.covariates[m]
        keys[i] = key
        dlts[i] = rec.dlt
    nbins = state.grid.num_doses << q
    tot = np.bincount(keys, minlength=nbins)
    tox = np.bincount(keys, weights=dlts, minlength=nbins)
    present = np.nonzero(tot)[0]

    grid_labels = np.asarray(state.grid.labels)
    X = np.empty((present.size, 1 + q))
    X[:, 0] = grid_labels[present >> q]
    for c in range(q):
        X[:, 1 + c] = (present >> (q - 1 - c)) & 1
    return estimation.fit_aggregated(
        X,
        tot[present].astype(float),
        tox[present],
        intercept=state.config.prior.intercept,
        covariate_indices=list(columns),
        pvalue_method=state.config.pvalue_method,
    )


def current_model(state: TrialState) -> FittedModel | None:
    """Joint working model over the currently selected covariates."""
    if not state.selected or not state.patients:
        return None
    return _fit_columns(state, state.selected)


def try_include(state: TrialState) -> tuple[int | None, SelectionEvent]:
    """Test the unselected covariates one by one; include the best if it clears."""
    config = state.config
    q = len(state.selected)
    remaining = [m for m in range(config.num_covariates) if m not in state.selected]
    cohort = state.cohort_count - 1
    pvalues: dict[int, float] = {}
    for m in remaining:
        columns = list(state.selected) + [m] if config.adjusted_candidate_model else [m]
        try:
            fit = _fit_columns(state, columns)
            pvalues[m] = fit.p_values.get(m, 1.0)
        except estimation.EstimationError:
            pvalues[m] = 1.0
    included, threshold, best, best_p = choose_inclusion(
        pvalues, q, config.num_covariates, config.alpha, config.conservative_inclusion_indexing
    )
    if included is not None:
        event = SelectionEvent(cohort, "included", included, best_p, threshold)
    else:
        event = SelectionEvent(cohort, "no_change", best, best_p, threshold)
    return included, event


def try_remove(state: TrialState) -> tuple[int | None, SelectionEvent]:
    """Joint fit over the selected covariates; drop the worst if it fails the cutoff."""
    if not state.selected:
        raise TrialError("no covariate is selected")
    config = state.config
    cohort = state.cohort_count - 1
    threshold = exclusion_threshold(len(state.selected), config.alpha)
    try:
        fit = _fit_columns(state, state.selected)
    except estimation.EstimationError:
        return None, SelectionEvent(cohort, "no_change", None, None, threshold)
    if fit.cov_matrix is None or abs(fit.dose_coef) > estimation.COEF_CAP:
        # joint fit degenerate beyond per-column handling: skip removal this cycle
        return None, SelectionEvent(cohort, "no_change", None, None, threshold)
    pvalues = {m: fit.p_values.get(m, 1.0) for m in state.selected}
    removed, threshold, worst, worst_p = choose_removal(pvalues, config.alpha)
    if removed is not None:
        return removed, SelectionEvent(cohort, "removed", removed, worst_p, threshold)
    return None, SelectionEvent(cohort, "no_change", worst, worst_p, threshold)


def _pattern_tried(state: TrialState, pattern: tuple[int, ...]) -> frozenset[int]:
    """Doses tried among patients sharing this restricted covariate pattern."""
    doses = set()
    for rec in state.patients:
        if tuple(rec.covariates[m] for m in state.selected) == pattern:
            doses.add(rec.dose_level)
    return frozenset(doses)


def _clamp(state: TrialState, proposed: int, pattern: tuple[int, ...] | None = None) -> int:
    if not state.config.no_skip:
        return proposed
    if state.config.no_skip_per_pattern and pattern is not None:
        tried = _pattern_tried(state, pattern)
    else:
        tried = state.tried_doses
    return clamp_no_skip(tried, proposed, state.grid.num_doses)


def recommend_for_pattern(model: FittedModel, labels, pattern: Sequence[int], target: float) -> int:
    """Dose whose modeled toxicity for this pattern is closest to the target."""
    probs = model.predict(labels, pattern)
    return int(np.argmin(np.abs(probs - target))) + 1


def assign_next_cohort(state: TrialState, patterns: Sequence[Sequence[int]]) -> list[int]:
    """Per-patient doses for a stage-two cohort given their covariate vectors."""
    if state.phase != Phase.STAGE_II:
        raise TrialError("per-pattern assignment only happens in stage two")
    return list(recommend_cohort(state, patterns).doses)


def recommend_cohort(state: TrialState, patterns: Sequence[Sequence[int]]) -> CohortRecommendation:
    """Doses for the next enrollment cohort in any phase.

    The very first cohort receives the configured start dose. Stage I and any
    stage-two cycle without a usable covariate model fall back to the
    one-sample CRM rule, a single dose for the whole cohort.
    """
    config = state.config
    n = len(patterns)
    if n != config.cohort_size:
        raise TrialError(f"expected a cohort of {config.cohort_size} patients")
    for pat in patterns:
        if len(pat) != config.num_covariates:
            raise TrialError("covariate vector has the wrong length")
    if state.phase == Phase.FINAL:
        raise TrialError("trial is complete")
    if state.n_patients + n > config.n_max:
        raise TrialError("cohort would exceed the total sample size")

    if not state.patients:
        return CohortRecommendation(doses=(config.start_dose,) * n, basis="start-dose")

    model = None
    if state.phase == Phase.STAGE_II and state.selected:
        model = current_model(state)
        if model is not None and model.usable_for_dosing:
            doses = []
            for pat in patterns:
                restricted = tuple(pat[m] for m in state.selected)
                proposed = recommend_for_pattern(model, state.grid.labels, restricted, config.target)
                doses.append(_clamp(state, proposed, restricted))
            return CohortRecommendation(doses=tuple(doses), basis="covariate-model", model=model)

    rec = crm_recommend(state)
    return CohortRecommendation(doses=(rec.dose_level,) * n, basis="one-sample", crm=rec, model=model)


def _update_labels(state: TrialState) -> TrialState:
    """Rescale the dose labels from the stage-one posterior toxicity estimates."""
    config = state.config
    probs = estimation.posterior_dlt_probs(
        toxicity_data(state), config.prior, state.grid.labels, method=config.posterior_prob_method
    )
    new_labels = estimation.logit(probs) - config.prior.intercept
    grid = replace(state.grid, labels=tuple(float(x) for x in new_labels))
    return replace(state, grid=grid, labels_updated=True, phase=Phase.STAGE_II)


def step(state: TrialState, cohort: Sequence[PatientRecord]) -> tuple[TrialState, tuple[SelectionEvent, ...]]:
    """Fold one observed cohort into the trial and run the screening cycle.

    Appends the records; at the stage-one boundary performs the label update
    and moves to stage two (no screening on that step); on later stage-two
    steps runs the inclusion test then the removal test, except after the
    last cohort; at the total sample size the trial becomes final.
    """
    config = state.config
    if state.phase == Phase.FINAL:
        raise TrialError("trial is complete")
    if len(cohort) != config.cohort_size:
        raise TrialError(f"expected a cohort of {config.cohort_size} patients")
    expected_cohort = state.cohort_count
    next_id = state.n_patients + 1
    for offset, rec in enumerate(cohort):
        if rec.cohort_index != expected_cohort:
            raise TrialError(f"cohort_index must be {expected_cohort}")
        if rec.id != next_id + offset:
            raise TrialError("patient ids must be sequential")

    new_state = replace(state, patients=state.patients + tuple(cohort))
    count = new_state.n_patients
    events: list[SelectionEvent] = []

    if not new_state.labels_updated and count >= config.stage_one:
        new_state = _update_labels(new_state)
    elif new_state.phase == Phase.STAGE_II and count < config.n_max:
        # the screening cycle exists to dose the next cohort; once the last
        # cohort is observed there is nothing left to assign, and the final
        # model simply uses whichever covariates remain
        included, inc_event = try_include(new_state)
        if included is not None:
            new_state = replace(new_state, selected=new_state.selected + (included,))
            events.append(inc_event)
        if new_state.selected:
            removed, rem_event = try_remove(new_state)
            if removed is not None:
                new_state = replace(
                    new_state, selected=tuple(m for m in new_state.selected if m != removed)
                )
                events.append(rem_event)
        if not events:
            events.append(inc_event)  # records the best candidate that failed

    if count >= config.n_max:
        new_state = replace(new_state, phase=Phase.FINAL)

    new_state = replace(new_state, events=new_state.events + tuple(events))
    return new_state, tuple(events)


def fitted_final_model(state: TrialState) -> FittedModel | None:
    if not state.selected:
        return None
    return _fit_columns(state, state.selected)


def finalize(state: TrialState) -> MtdTable:
    """Final MTD per pattern of the selected covariates (Final phase only)."""
    if state.phase != Phase.FINAL:
        raise TrialError("trial has not reached the total sample size")
    selected = state.selected
    if not selected:
        dose = crm_final_mtd(state)
        return MtdTable(entries=(((), dose),), selected=(), model=None)

    k = len(selected)
    patterns = list(itertools.product((0, 1), repeat=k))
    try:
        model = _fit_columns(state, selected)
    except estimation.EstimationError:
        model = None
    if model is None or not model.usable_for_dosing:
        dose = crm_final_mtd(state)
        entries = tuple((pattern, dose) for pattern in patterns)
        return MtdTable(entries=entries, selected=tuple(selected), model=None, fallback=True)

    entries = tuple(
        (pattern, recommend_for_pattern(model, state.grid.labels, pattern, state.config.target))
        for pattern in patterns
    )
    return MtdTable(entries=entries, selected=tuple(selected), model=model)
