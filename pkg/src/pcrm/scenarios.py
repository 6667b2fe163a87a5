"""True dose-toxicity scenarios used by the simulator.

Each scenario fixes, per subgroup, the true DLT probability at every dose.
Scenarios 1-4 split the population on the second criterion (z2), with the
subgroups' optimal doses one to three levels apart; scenario 5 is a
homogeneous population. Subgroup rows are ordered by increasing true MTD,
so for the split scenarios row 0 is the z2 = 1 subgroup.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import PatientRecord, TrialError


@dataclass(frozen=True)
class ScenarioTruth:
    id: int
    split_covariate: int | None  # 0-based covariate index, None = homogeneous
    rows: tuple[tuple[float, ...], ...]
    true_mtds: tuple[int, ...]
    target: float = 0.25

    def __post_init__(self):
        if len(self.rows) != len(self.true_mtds):
            raise TrialError("one true MTD per subgroup row is required")
        for row, mtd in zip(self.rows, self.true_mtds):
            arr = np.asarray(row, dtype=float)
            if np.any(arr <= 0.0) or np.any(arr >= 1.0):
                raise TrialError("true DLT probabilities must lie in (0, 1)")
            # ties are allowed: flat stretches occur at the bottom of real curves
            if np.any(np.diff(arr) < 0.0):
                raise TrialError("true DLT probabilities cannot decrease with dose")
            if int(np.argmin(np.abs(arr - self.target))) + 1 != mtd:
                raise TrialError(f"scenario {self.id}: true MTD does not match its row")
        if self.split_covariate is None and len(self.rows) != 1:
            raise TrialError("a homogeneous scenario has exactly one row")
        if self.split_covariate is not None and len(self.rows) != 2:
            raise TrialError("a split scenario has exactly two rows")

    @property
    def num_subgroups(self) -> int:
        return len(self.rows)

    @property
    def num_doses(self) -> int:
        return len(self.rows[0])

    def subgroup_label(self, k: int) -> str:
        if self.split_covariate is None:
            return "all"
        name = f"z{self.split_covariate + 1}"
        return f"{name}={1 - k}"  # row 0 is the criterion-met subgroup

    def subgroup_of_covariates(self, covariates: Sequence[int]) -> int:
        if self.split_covariate is None:
            return 0
        return 0 if covariates[self.split_covariate] == 1 else 1

    def dlt_probability(self, covariates: Sequence[int], dose_level: int) -> float:
        return self.rows[self.subgroup_of_covariates(covariates)][dose_level - 1]


def subgroup_of(patient: PatientRecord, scenario: ScenarioTruth) -> int:
    """Truth-table row index for a patient (pure in the split covariates)."""
    return scenario.subgroup_of_covariates(patient.covariates)


SCENARIOS: dict[int, ScenarioTruth] = {
    1: ScenarioTruth(
        id=1,
        split_covariate=1,
        rows=((0.25, 0.45, 0.60, 0.75, 0.85, 0.90), (0.02, 0.25, 0.45, 0.60, 0.75, 0.85)),
        true_mtds=(1, 2),
    ),
    2: ScenarioTruth(
        id=2,
        split_covariate=1,
        rows=((0.05, 0.25, 0.45, 0.60, 0.75, 0.85), (0.02, 0.05, 0.25, 0.45, 0.60, 0.75)),
        true_mtds=(2, 3),
    ),
    3: ScenarioTruth(
        id=3,
        split_covariate=1,
        rows=((0.05, 0.25, 0.45, 0.60, 0.75, 0.85), (0.02, 0.05, 0.08, 0.25, 0.45, 0.60)),
        true_mtds=(2, 4),
    ),
    4: ScenarioTruth(
        id=4,
        split_covariate=1,
        rows=((0.05, 0.08, 0.25, 0.45, 0.60, 0.70), (0.01, 0.01, 0.02, 0.05, 0.08, 0.25)),
        true_mtds=(3, 6),
    ),
    5: ScenarioTruth(
        id=5,
        split_covariate=None,
        rows=((0.08, 0.25, 0.45, 0.60, 0.70, 0.75),),
        true_mtds=(2,),
    ),
}


def get_scenario(scenario_id: int) -> ScenarioTruth:
    try:
        return SCENARIOS[scenario_id]
    except KeyError:
        raise TrialError(f"unknown scenario {scenario_id}") from None
