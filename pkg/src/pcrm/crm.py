"""One-sample CRM engine: model-based next dose and single-population MTD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Phase, TrialState, TrialError, lowest_untried_at_or_below
from .estimation import CrmPrior, posterior_dlt_probs


def toxicity_data(state: TrialState) -> list[tuple[float, int]]:
    """(current label, dlt) pairs for the full history."""
    labels = state.grid.labels
    return [(labels[rec.dose_level - 1], rec.dlt) for rec in state.patients]


@dataclass(frozen=True)
class CrmRecommendation:
    dose_level: int
    probs: tuple[float, ...]
    applied_no_skip: bool


def _closest_dose(probs: np.ndarray, target: float) -> int:
    # np.argmin takes the first minimum, i.e. the lower dose on ties
    return int(np.argmin(np.abs(probs - target))) + 1


def crm_recommend(state: TrialState, prior: CrmPrior | None = None, target: float | None = None) -> CrmRecommendation:
    """Dose whose estimated toxicity is closest to the target, no-skip applied."""
    prior = prior if prior is not None else state.config.prior
    target = target if target is not None else state.config.target
    probs = posterior_dlt_probs(
        toxicity_data(state), prior, state.grid.labels, method=state.config.posterior_prob_method
    )
    proposed = _closest_dose(probs, target)
    dose = lowest_untried_at_or_below(state, proposed) if state.config.no_skip else proposed
    return CrmRecommendation(dose_level=dose, probs=tuple(float(p) for p in probs), applied_no_skip=dose != proposed)


def crm_final_mtd(state: TrialState, prior: CrmPrior | None = None, target: float | None = None) -> int:
    """Final single-population MTD estimate; no assignment clamp."""
    if state.phase != Phase.FINAL:
        raise TrialError("final MTD is only estimated once the trial is complete")
    prior = prior if prior is not None else state.config.prior
    target = target if target is not None else state.config.target
    probs = posterior_dlt_probs(
        toxicity_data(state), prior, state.grid.labels, method=state.config.posterior_prob_method
    )
    return _closest_dose(probs, target)
