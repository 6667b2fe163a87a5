"""Monte Carlo replicate engine for the design's operating characteristics.

Replicates are embarrassingly parallel: each owns its trial state and a
counter-based RNG stream derived from the master seed and the cell
coordinates, never from the worker layout, so a grid run is bit-identical at
any worker count. The one-sample CRM comparator consumes the identical
random stream, giving paired patients across designs.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .core import DesignConfig, PatientRecord, Phase, TrialState
from .crm import crm_final_mtd, crm_recommend
from .design import MtdTable, finalize, new_trial, recommend_cohort, step
from .metrics import MetricsReport, build_report
from .scenarios import ScenarioTruth, get_scenario

DESIGN_PCRM = "pcrm"
DESIGN_ONE_SAMPLE = "one-sample"

_CHUNK = 250  # replicates per worker task; fixed so results never depend on workers


@dataclass(frozen=True)
class SimConfig:
    """Simulation grid: scenarios x prevalences x sample sizes x designs."""

    design: DesignConfig
    scenarios: tuple[int, ...] = (1, 2, 3, 4, 5)
    prevalences: tuple[tuple[float, ...], ...] = ((0.5, 0.5, 0.5),)
    n_max_grid: tuple[int, ...] = (30, 45, 60, 72)
    replicates: int = 2000
    comparator: str = "both"  # "pcrm" | "one-sample" | "both"
    master_seed: int = 20240607
    threads: int = 1
    distribution_mode: str = "patient"

    def __post_init__(self):
        if self.replicates < 1:
            raise ValueError("at least one replicate is required")
        if self.comparator not in (DESIGN_PCRM, DESIGN_ONE_SAMPLE, "both"):
            raise ValueError("comparator must be 'pcrm', 'one-sample' or 'both'")
        for prev in self.prevalences:
            if len(prev) != self.design.num_covariates:
                raise ValueError("prevalence vector length must equal the covariate count")
            if any(not 0.0 < p < 1.0 for p in prev):
                raise ValueError("prevalences must lie in (0, 1)")
        for scenario_id in self.scenarios:
            get_scenario(scenario_id)

    @property
    def designs(self) -> tuple[str, ...]:
        if self.comparator == "both":
            return (DESIGN_PCRM, DESIGN_ONE_SAMPLE)
        return (self.comparator,)


@dataclass(frozen=True)
class ReplicateResult:
    selected: frozenset[int]
    counts: tuple[tuple[int, ...], ...]  # (subgroup, dose) patient tallies
    failed: bool


def replicate_seed(master_seed: int, scenario_id: int, prevalence, n_max: int, index: int):
    """Deterministic entropy for one replicate, independent of the design arm."""
    prev_key = tuple(int(round(p * 1_000_000)) for p in prevalence)
    return np.random.SeedSequence(entropy=(master_seed, scenario_id, *prev_key, n_max, index))


def generate_patient(
    rng: np.random.Generator,
    prevalence,
    scenario: ScenarioTruth,
    assigned_dose: int,
    patient_id: int,
    cohort_index: int,
) -> PatientRecord:
    """Draw one patient's criteria and outcome at the assigned dose."""
    m = len(prevalence)
    u = rng.random(m + 1)
    covariates = tuple(int(u[i] < prevalence[i]) for i in range(m))
    dlt = int(u[m] < scenario.dlt_probability(covariates, assigned_dose))
    return PatientRecord(
        id=patient_id, covariates=covariates, dose_level=assigned_dose, dlt=dlt, cohort_index=cohort_index
    )


def _draw_cohort_uniforms(rng: np.random.Generator, cohort_size: int, m: int) -> np.ndarray:
    # one row of M+1 uniforms per patient, consumed identically by both designs
    return rng.random((cohort_size, m + 1))


def _cohort_records(u, prevalence, scenario, doses, first_id, cohort_index):
    records = []
    m = len(prevalence)
    for i, dose in enumerate(doses):
        covariates = tuple(int(u[i, j] < prevalence[j]) for j in range(m))
        dlt = int(u[i, m] < scenario.dlt_probability(covariates, dose))
        records.append(
            PatientRecord(
                id=first_id + i, covariates=covariates, dose_level=dose, dlt=dlt, cohort_index=cohort_index
            )
        )
    return records


def run_replicate(
    scenario: ScenarioTruth,
    prevalence,
    config: DesignConfig,
    design_kind: str,
    seed: np.random.SeedSequence,
) -> ReplicateResult:
    """Simulate one full trial and tabulate its final per-patient doses."""
    rng = np.random.default_rng(seed)
    cohort_size = config.cohort_size
    m = config.num_covariates
    n_cohorts = config.n_max // cohort_size

    state = new_trial(config)
    failed = False
    if design_kind == DESIGN_PCRM:
        try:
            for c in range(n_cohorts):
                u = _draw_cohort_uniforms(rng, cohort_size, m)
                covariates = [
                    tuple(int(u[i, j] < prevalence[j]) for j in range(m)) for i in range(cohort_size)
                ]
                rec = recommend_cohort(state, covariates)
                records = _cohort_records(u, prevalence, scenario, rec.doses, state.n_patients + 1, c)
                state, _ = step(state, records)
            table = finalize(state)
        except Exception:
            # a replicate that cannot proceed completes enrollment on the
            # one-sample rule and reports the one-sample MTD, flagged
            failed = True
            while state.n_patients < config.n_max:
                c = state.n_patients // cohort_size
                u = _draw_cohort_uniforms(rng, cohort_size, m)
                try:
                    dose = crm_recommend(state).dose_level if state.patients else config.start_dose
                except Exception:
                    dose = _last_dose(state, config)
                records = _cohort_records(u, prevalence, scenario, (dose,) * cohort_size, state.n_patients + 1, c)
                state = replace(state, patients=state.patients + tuple(records))
            table = _fallback_table(state)
    elif design_kind == DESIGN_ONE_SAMPLE:
        for c in range(n_cohorts):
            u = _draw_cohort_uniforms(rng, cohort_size, m)
            if state.n_patients == 0:
                dose = config.start_dose
            else:
                dose = crm_recommend(state).dose_level
            records = _cohort_records(u, prevalence, scenario, (dose,) * cohort_size, state.n_patients + 1, c)
            state = replace(state, patients=state.patients + tuple(records))
        state = replace(state, phase=Phase.FINAL)
        try:
            dose = crm_final_mtd(state)
        except Exception:
            failed = True
            dose = config.start_dose
        table = MtdTable(entries=(((), dose),), selected=(), model=None)
    else:
        raise ValueError(f"unknown design {design_kind!r}")

    counts = np.zeros((scenario.num_subgroups, config.doses), dtype=np.int64)
    for patient in state.patients:
        k = scenario.subgroup_of_covariates(patient.covariates)
        dose = table.dose_for(patient.covariates)
        counts[k, dose - 1] += 1
    return ReplicateResult(
        selected=frozenset(table.selected), counts=tuple(map(tuple, counts.tolist())), failed=failed
    )


def _last_dose(state: TrialState, config: DesignConfig) -> int:
    return state.patients[-1].dose_level if state.patients else config.start_dose


def _fallback_table(state: TrialState) -> MtdTable:
    """One-sample fallback for a replicate whose finalize failed."""
    final_state = state if state.phase == Phase.FINAL else replace(state, phase=Phase.FINAL)
    try:
        dose = crm_final_mtd(final_state)
    except Exception:
        dose = _last_dose(state, state.config)
    k = len(state.selected)
    entries = tuple((pattern, dose) for pattern in itertools.product((0, 1), repeat=k))
    return MtdTable(entries=entries, selected=state.selected, model=None, fallback=True)


@dataclass(frozen=True)
class _Cell:
    scenario_id: int
    prevalence: tuple[float, ...]
    n_max: int
    design_kind: str


def _run_chunk(args) -> tuple[int, int, list[tuple]]:
    cell_idx, chunk_idx, cell, base_config_dict, master_seed, start, stop = args
    from .core import config_from_dict

    config = replace(config_from_dict(base_config_dict), n_max=cell.n_max)
    scenario = get_scenario(cell.scenario_id)
    out = []
    for r in range(start, stop):
        seed = replicate_seed(master_seed, cell.scenario_id, cell.prevalence, cell.n_max, r)
        result = run_replicate(scenario, cell.prevalence, config, cell.design_kind, seed)
        out.append((sorted(result.selected), result.counts, result.failed))
    return cell_idx, chunk_idx, out


def run_grid(config: SimConfig, progress=None) -> list[MetricsReport]:
    """Run every cell of the simulation grid and aggregate its metrics.

    Results are reduced in (cell, replicate) order regardless of the worker
    count, so a rerun with the same master seed is bit-identical.
    """
    from .core import config_to_dict

    cells = [
        _Cell(scenario_id, prev, n_max, kind)
        for scenario_id in config.scenarios
        for prev in config.prevalences
        for n_max in config.n_max_grid
        for kind in config.designs
    ]
    base = config_to_dict(config.design)
    tasks = []
    for cell_idx, cell in enumerate(cells):
        for chunk_idx, start in enumerate(range(0, config.replicates, _CHUNK)):
            stop = min(start + _CHUNK, config.replicates)
            tasks.append((cell_idx, chunk_idx, cells[cell_idx], base, config.master_seed, start, stop))

    results: dict[int, dict[int, list]] = {i: {} for i in range(len(cells))}
    if config.threads > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            for cell_idx, chunk_idx, chunk in pool.map(_run_chunk, tasks, chunksize=1):
                results[cell_idx][chunk_idx] = chunk
                if progress is not None:
                    progress(cell_idx, chunk_idx, len(tasks))
    else:
        for task in tasks:
            cell_idx, chunk_idx, chunk = _run_chunk(task)
            results[cell_idx][chunk_idx] = chunk
            if progress is not None:
                progress(cell_idx, chunk_idx, len(tasks))

    reports = []
    for cell_idx, cell in enumerate(cells):
        ordered: list[tuple] = []
        for chunk_idx in sorted(results[cell_idx]):
            ordered.extend(results[cell_idx][chunk_idx])
        scenario = get_scenario(cell.scenario_id)
        selected_sets = [frozenset(sel) for sel, _, _ in ordered]
        counts = np.array([c for _, c, _ in ordered], dtype=np.int64)
        failed = sum(1 for _, _, f in ordered if f)
        reports.append(
            build_report(
                scenario,
                cell.prevalence,
                cell.n_max,
                cell.design_kind,
                selected_sets,
                counts,
                failed,
                distribution_mode=config.distribution_mode,
            )
        )
    return reports
