"""Operating-characteristic metrics over simulated replicates.

Covers the criteria-selection classification, the pooled per-subgroup
dose-selection distribution, the probability of correct MTD selection (PCS),
and its closeness-weighted variant (WPS), each with Monte Carlo standard
errors (replicates are the clusters for the patient-pooled quantities).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenarios import ScenarioTruth

SELECTION_CATEGORIES = ("none", "correct_only", "correct_with_others", "incorrect")


def classify_selection(final_selected: frozenset[int] | set[int], scenario: ScenarioTruth) -> str:
    """Bucket a replicate's final covariate set against the scenario truth."""
    selected = frozenset(final_selected)
    if scenario.split_covariate is None:
        return "none" if not selected else "incorrect"
    truth = scenario.split_covariate
    if not selected:
        return "none"
    if selected == {truth}:
        return "correct_only"
    if truth in selected:
        return "correct_with_others"
    return "incorrect"


def wps_weights(truth_row, target: float) -> np.ndarray:
    """Dose weights from closeness of true toxicity to the target.

    The least desirable dose gets weight 0 and any dose attaining the minimum
    distance gets weight 1.
    """
    dist = np.abs(np.asarray(truth_row, dtype=float) - target)
    spread = dist.max() - dist.min()
    if spread <= 0.0:
        raise ValueError("all doses are equidistant from the target; weights undefined")
    return (dist.max() - dist) / spread


def compute_pcs(distribution, true_mtd: int) -> float:
    """Probability mass the selection distribution puts on the true MTD."""
    return float(np.asarray(distribution, dtype=float)[true_mtd - 1])


def compute_wps(distribution, truth_row, target: float) -> float:
    """Closeness-weighted selection probability for one subgroup."""
    return float(wps_weights(truth_row, target) @ np.asarray(distribution, dtype=float))


def _ratio_se(numerators: np.ndarray, denominators: np.ndarray) -> float:
    """Cluster (per-replicate) standard error of sum(a_r) / sum(n_r)."""
    total = denominators.sum()
    if total <= 0:
        return float("nan")
    r = len(numerators)
    if r < 2:
        return float("nan")
    p_hat = numerators.sum() / total
    resid = numerators - p_hat * denominators
    return float(math.sqrt(r / (r - 1) * (resid**2).sum()) / total)


@dataclass
class SubgroupMetrics:
    index: int
    label: str
    true_mtd: int
    truth_row: tuple[float, ...]
    n_pooled: int
    distribution: tuple[float, ...]
    pcs: float
    pcs_se: float
    wps: float
    wps_se: float

    def to_dict(self) -> dict:
        return {
            "subgroup": self.index,
            "label": self.label,
            "true_mtd": self.true_mtd,
            "truth_row": list(self.truth_row),
            "n_pooled": self.n_pooled,
            "distribution": list(self.distribution),
            "pcs": self.pcs,
            "pcs_se": self.pcs_se,
            "wps": self.wps,
            "wps_se": self.wps_se,
        }


@dataclass
class MetricsReport:
    """Operating characteristics for one (scenario, prevalence, N_max, design) cell."""

    scenario_id: int
    prevalence: tuple[float, ...]
    n_max: int
    design: str  # "pcrm" | "one-sample"
    replicates: int
    failed: int
    selection_counts: dict[str, int]
    selection_pct: dict[str, float]
    selection_se: dict[str, float]
    subgroups: list[SubgroupMetrics] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario_id,
            "prevalence": list(self.prevalence),
            "n_max": self.n_max,
            "design": self.design,
            "replicates": self.replicates,
            "failed": self.failed,
            "criteria_selection": {
                "counts": dict(self.selection_counts),
                "percent": dict(self.selection_pct),
                "se": dict(self.selection_se),
            },
            "subgroups": [s.to_dict() for s in self.subgroups],
        }


def build_report(
    scenario: ScenarioTruth,
    prevalence: tuple[float, ...],
    n_max: int,
    design: str,
    selected_sets: list[frozenset[int]],
    counts: np.ndarray,
    failed: int,
    distribution_mode: str = "patient",
) -> MetricsReport:
    """Aggregate per-replicate results into one report.

    ``counts`` has shape (replicates, subgroups, doses): the number of the
    replicate's enrolled patients in each true subgroup whose final-table
    recommendation was each dose. ``distribution_mode`` 'patient' pools
    patients across replicates; 'replicate' normalizes each replicate's row
    first so every replicate votes once per subgroup.
    """
    counts = np.asarray(counts, dtype=float)
    n_reps = len(selected_sets)
    if counts.shape[0] != n_reps:
        raise ValueError("counts and selected_sets disagree on the replicate count")

    cat_counts = {c: 0 for c in SELECTION_CATEGORIES}
    for sel in selected_sets:
        cat_counts[classify_selection(sel, scenario)] += 1
    pct = {}
    se = {}
    for c in SELECTION_CATEGORIES:
        p = cat_counts[c] / n_reps
        pct[c] = 100.0 * p
        se[c] = 100.0 * math.sqrt(p * (1.0 - p) / n_reps)

    subgroups = []
    for k in range(scenario.num_subgroups):
        per_rep = counts[:, k, :]  # (reps, doses)
        n_rep_patients = per_rep.sum(axis=1)
        if distribution_mode == "patient":
            pooled = per_rep.sum(axis=0)
            total = pooled.sum()
            dist = pooled / total if total > 0 else np.zeros(scenario.num_doses)
            dose_num = per_rep
            dose_den = n_rep_patients
        elif distribution_mode == "replicate":
            with np.errstate(invalid="ignore"):
                rows = np.where(
                    n_rep_patients[:, None] > 0, per_rep / np.maximum(n_rep_patients, 1.0)[:, None], 0.0
                )
            contributed = (n_rep_patients > 0).astype(float)
            total = contributed.sum()
            dist = rows.sum(axis=0) / total if total > 0 else np.zeros(scenario.num_doses)
            dose_num = rows
            dose_den = contributed
        else:
            raise ValueError(f"unknown distribution mode {distribution_mode!r}")

        true_mtd = scenario.true_mtds[k]
        weights = wps_weights(scenario.rows[k], scenario.target)
        pcs = compute_pcs(dist, true_mtd)
        wps = compute_wps(dist, scenario.rows[k], scenario.target)
        subgroups.append(
            SubgroupMetrics(
                index=k,
                label=scenario.subgroup_label(k),
                true_mtd=true_mtd,
                truth_row=tuple(scenario.rows[k]),
                n_pooled=int(per_rep.sum()),
                distribution=tuple(float(x) for x in dist),
                pcs=pcs,
                pcs_se=_ratio_se(dose_num[:, true_mtd - 1], dose_den),
                wps=wps,
                wps_se=_ratio_se(dose_num @ weights, dose_den),
            )
        )

    return MetricsReport(
        scenario_id=scenario.id,
        prevalence=tuple(prevalence),
        n_max=n_max,
        design=design,
        replicates=n_reps,
        failed=failed,
        selection_counts=cat_counts,
        selection_pct=pct,
        selection_se=se,
        subgroups=subgroups,
    )
