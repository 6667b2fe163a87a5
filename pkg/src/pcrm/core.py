"""Domain types and structural rules shared by the whole design.

Everything here is an immutable value object; the trial state only changes
through :func:`pcrm.design.step`, which returns a new state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .estimation import CrmPrior

STATE_VERSION = "pcrm-state-v1"


class TrialError(ValueError):
    """Violation of a trial-state precondition or invariant."""


class Phase(str, Enum):
    STAGE_I = "StageI"
    STAGE_II = "StageII"
    FINAL = "Final"


@dataclass(frozen=True)
class DoseGrid:
    """Ordered dose levels with their prior DLT guesses and working labels."""

    levels: tuple[int, ...]
    skeleton: tuple[float, ...]
    labels: tuple[float, ...]

    def __post_init__(self):
        j = len(self.levels)
        if j < 1:
            raise TrialError("dose grid is empty")
        if len(self.skeleton) != j or len(self.labels) != j:
            raise TrialError("levels, skeleton and labels must have equal length")
        if tuple(self.levels) != tuple(range(1, j + 1)):
            raise TrialError("dose levels must be 1..J in order")
        if any(not 0.0 < p < 1.0 for p in self.skeleton):
            raise TrialError("skeleton values must lie in (0, 1)")
        if any(b <= a for a, b in zip(self.skeleton, self.skeleton[1:])):
            raise TrialError("skeleton must be strictly increasing")
        if any(b <= a for a, b in zip(self.labels, self.labels[1:])):
            raise TrialError("dose labels must be strictly increasing")

    @property
    def num_doses(self) -> int:
        return len(self.levels)


@dataclass(frozen=True)
class CovariateSpec:
    """Binary patient criteria screened by the design (1 = loosened criterion met)."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise TrialError("covariate names must be unique")

    @property
    def size(self) -> int:
        return len(self.names)

    @classmethod
    def of(cls, spec: int | Sequence[str]) -> "CovariateSpec":
        if isinstance(spec, int):
            return cls(tuple(f"z{i + 1}" for i in range(spec)))
        return cls(tuple(spec))


@dataclass(frozen=True)
class PatientRecord:
    id: int
    covariates: tuple[int, ...]
    dose_level: int
    dlt: int
    cohort_index: int

    def __post_init__(self):
        if self.dlt not in (0, 1):
            raise TrialError("dlt must be 0 or 1")
        if any(v not in (0, 1) for v in self.covariates):
            raise TrialError("covariates must be 0/1")


@dataclass(frozen=True)
class SelectionEvent:
    """One decision in a covariate screening cycle (audit trail)."""

    cohort_index: int
    action: str  # "included" | "removed" | "no_change"
    covariate: int | None
    p_value: float | None
    threshold: float | None

    def __post_init__(self):
        if self.action not in ("included", "removed", "no_change"):
            raise TrialError(f"unknown selection action {self.action!r}")
        if self.p_value is not None and not 0.0 <= self.p_value <= 1.0:
            raise TrialError("recorded p-value must lie in [0, 1]")


@dataclass(frozen=True)
class DesignConfig:
    """Design parameters for a precision dose-finding trial."""

    doses: int
    covariates: CovariateSpec
    target: float = 0.25
    stage_one: int = 15
    n_max: int = 30
    cohort_size: int = 3
    start_dose: int = 2
    alpha: float = 0.20
    prior: CrmPrior = CrmPrior()
    skeleton: tuple[float, ...] | None = None
    calibration_nu: int | None = 2
    calibration_delta: float | None = 0.08
    no_skip: bool = True
    no_skip_per_pattern: bool = False
    pvalue_method: str = "wald"
    # candidate tests use dose + candidate only; set True to adjust for the
    # covariates already selected
    adjusted_candidate_model: bool = False
    conservative_inclusion_indexing: bool = False
    posterior_prob_method: str = "plugin"

    def __post_init__(self):
        if self.doses < 2:
            raise TrialError("need at least two doses")
        if not 0.0 < self.target < 1.0:
            raise TrialError("target must lie in (0, 1)")
        if not 1 <= self.start_dose <= self.doses:
            raise TrialError("start dose out of range")
        if self.cohort_size < 1:
            raise TrialError("cohort size must be positive")
        if self.stage_one > self.n_max:
            raise TrialError("stage one size cannot exceed the total sample size")
        if self.stage_one % self.cohort_size != 0:
            raise TrialError("stage one size must be a multiple of the cohort size")
        if (self.n_max - self.stage_one) % self.cohort_size != 0:
            raise TrialError("n_max - stage_one must be a multiple of the cohort size")
        # alpha == 0 is allowed: it turns covariate selection off entirely.
        if not 0.0 <= self.alpha < 1.0:
            raise TrialError("alpha must lie in [0, 1)")
        if self.skeleton is not None:
            if len(self.skeleton) != self.doses:
                raise TrialError("explicit skeleton length must equal the number of doses")
        else:
            if self.calibration_nu is None or self.calibration_delta is None:
                raise TrialError("either an explicit skeleton or a calibration (nu, delta) is required")
            if not 1 <= self.calibration_nu <= self.doses:
                raise TrialError("calibration nu out of range")
        if self.pvalue_method not in ("wald", "lrt"):
            raise TrialError("pvalue_method must be 'wald' or 'lrt'")
        if self.posterior_prob_method not in ("plugin", "mean"):
            raise TrialError("posterior_prob_method must be 'plugin' or 'mean'")

    @property
    def num_covariates(self) -> int:
        return self.covariates.size


@dataclass(frozen=True)
class TrialState:
    """Full sequential history of one trial plus design-phase bookkeeping."""

    config: DesignConfig
    grid: DoseGrid
    patients: tuple[PatientRecord, ...] = ()
    phase: Phase = Phase.STAGE_I
    selected: tuple[int, ...] = ()
    labels_updated: bool = False
    events: tuple[SelectionEvent, ...] = ()

    def __post_init__(self):
        m = self.config.num_covariates
        if len(set(self.selected)) != len(self.selected):
            raise TrialError("selected covariates must be unique")
        if any(not 0 <= s < m for s in self.selected):
            raise TrialError("selected covariate index out of range")
        if self.phase == Phase.STAGE_I and self.selected:
            raise TrialError("no covariate can be selected during stage one")
        for rec in self.patients:
            if len(rec.covariates) != m:
                raise TrialError("patient covariate vector has the wrong length")
            if not 1 <= rec.dose_level <= self.grid.num_doses:
                raise TrialError("patient dose level outside the grid")

    @property
    def n_patients(self) -> int:
        return len(self.patients)

    @property
    def tried_doses(self) -> frozenset[int]:
        return frozenset(rec.dose_level for rec in self.patients)

    @property
    def cohort_count(self) -> int:
        return self.n_patients // self.config.cohort_size


def clamp_no_skip(tried: Iterable[int], proposed: int, num_doses: int) -> int:
    """Cap escalation at one level above the highest dose tried so far.

    De-escalation and previously tried doses pass through unchanged; with no
    history the proposal stands (the start dose is assigned unconstrained).
    """
    if not 1 <= proposed <= num_doses:
        raise TrialError("proposed dose outside the grid")
    tried = set(tried)
    if not tried or proposed in tried:
        return proposed
    return min(proposed, max(tried) + 1)


def lowest_untried_at_or_below(state: TrialState, proposed: int) -> int:
    """No-skip rule applied against the trial's tried-dose set."""
    return clamp_no_skip(state.tried_doses, proposed, state.grid.num_doses)


# --- serialization (pcrm-state-v1) -----------------------------------------

def config_to_dict(config: DesignConfig) -> dict:
    out = {
        "doses": config.doses,
        "covariates": list(config.covariates.names),
        "target": config.target,
        "stage_one": config.stage_one,
        "n_max": config.n_max,
        "cohort_size": config.cohort_size,
        "start_dose": config.start_dose,
        "alpha": config.alpha,
        "prior": {
            "mean": config.prior.mean,
            "variance": config.prior.variance,
            "intercept": config.prior.intercept,
        },
        "no_skip": config.no_skip,
        "no_skip_per_pattern": config.no_skip_per_pattern,
        "pvalue_method": config.pvalue_method,
        "adjusted_candidate_model": config.adjusted_candidate_model,
        "conservative_inclusion_indexing": config.conservative_inclusion_indexing,
        "posterior_prob_method": config.posterior_prob_method,
    }
    if config.skeleton is not None:
        out["skeleton"] = list(config.skeleton)
    else:
        out["calibration"] = {"nu": config.calibration_nu, "delta": config.calibration_delta}
    return out


def config_from_dict(data: dict) -> DesignConfig:
    prior = data.get("prior", {})
    calibration = data.get("calibration")
    skeleton = data.get("skeleton")
    return DesignConfig(
        doses=int(data["doses"]),
        covariates=CovariateSpec.of(data.get("covariates", 0)),
        target=float(data.get("target", 0.25)),
        stage_one=int(data.get("stage_one", 15)),
        n_max=int(data.get("n_max", 30)),
        cohort_size=int(data.get("cohort_size", 3)),
        start_dose=int(data.get("start_dose", 2)),
        alpha=float(data.get("alpha", 0.20)),
        prior=CrmPrior(
            mean=float(prior.get("mean", 0.0)),
            variance=float(prior.get("variance", 1.34)),
            intercept=float(prior.get("intercept", 3.0)),
        ),
        skeleton=tuple(float(p) for p in skeleton) if skeleton is not None else None,
        calibration_nu=int(calibration["nu"]) if calibration else (None if skeleton is not None else 2),
        calibration_delta=float(calibration["delta"]) if calibration else (None if skeleton is not None else 0.08),
        no_skip=bool(data.get("no_skip", True)),
        no_skip_per_pattern=bool(data.get("no_skip_per_pattern", False)),
        pvalue_method=data.get("pvalue_method", "wald"),
        adjusted_candidate_model=bool(data.get("adjusted_candidate_model", False)),
        conservative_inclusion_indexing=bool(data.get("conservative_inclusion_indexing", False)),
        posterior_prob_method=data.get("posterior_prob_method", "plugin"),
    )


def state_to_dict(state: TrialState) -> dict:
    return {
        "version": STATE_VERSION,
        "config": config_to_dict(state.config),
        "grid": {
            "levels": list(state.grid.levels),
            "skeleton": list(state.grid.skeleton),
            "labels": list(state.grid.labels),
        },
        "patients": [
            {
                "id": rec.id,
                "covariates": list(rec.covariates),
                "dose_level": rec.dose_level,
                "dlt": rec.dlt,
                "cohort_index": rec.cohort_index,
            }
            for rec in state.patients
        ],
        "phase": state.phase.value,
        "selected": list(state.selected),
        "labels_updated": state.labels_updated,
        "events": [
            {
                "cohort_index": ev.cohort_index,
                "action": ev.action,
                "covariate": ev.covariate,
                "p_value": ev.p_value,
                "threshold": ev.threshold,
            }
            for ev in state.events
        ],
    }


def state_from_dict(data: dict) -> TrialState:
    version = data.get("version")
    if version != STATE_VERSION:
        raise TrialError(f"unsupported state version {version!r}")
    grid = data["grid"]
    return TrialState(
        config=config_from_dict(data["config"]),
        grid=DoseGrid(
            levels=tuple(int(v) for v in grid["levels"]),
            skeleton=tuple(float(v) for v in grid["skeleton"]),
            labels=tuple(float(v) for v in grid["labels"]),
        ),
        patients=tuple(
            PatientRecord(
                id=int(rec["id"]),
                covariates=tuple(int(v) for v in rec["covariates"]),
                dose_level=int(rec["dose_level"]),
                dlt=int(rec["dlt"]),
                cohort_index=int(rec["cohort_index"]),
            )
            for rec in data["patients"]
        ),
        phase=Phase(data["phase"]),
        selected=tuple(int(v) for v in data["selected"]),
        labels_updated=bool(data["labels_updated"]),
        events=tuple(
            SelectionEvent(
                cohort_index=int(ev["cohort_index"]),
                action=ev["action"],
                covariate=ev["covariate"] if ev["covariate"] is None else int(ev["covariate"]),
                p_value=ev["p_value"] if ev["p_value"] is None else float(ev["p_value"]),
                threshold=ev["threshold"] if ev["threshold"] is None else float(ev["threshold"]),
            )
            for ev in data["events"]
        ),
    )


def state_to_json(state: TrialState) -> str:
    return json.dumps(state_to_dict(state), indent=2, sort_keys=True)


def state_from_json(text: str) -> TrialState:
    return state_from_dict(json.loads(text))
