"""Precision dose-finding: a two-stage CRM that screens patient criteria and
recommends subgroup-specific maximum tolerated doses."""

from .core import (
    CovariateSpec,
    DesignConfig,
    DoseGrid,
    PatientRecord,
    Phase,
    SelectionEvent,
    TrialError,
    TrialState,
    lowest_untried_at_or_below,
    state_from_json,
    state_to_json,
)
from .crm import CrmRecommendation, crm_final_mtd, crm_recommend
from .design import (
    MtdTable,
    assign_next_cohort,
    exclusion_threshold,
    finalize,
    inclusion_threshold,
    new_trial,
    recommend_cohort,
    step,
    try_include,
    try_remove,
)
from .estimation import (
    CrmPrior,
    EstimationError,
    FittedModel,
    QuadratureError,
    calibrate_skeleton,
    dose_labels,
    fit_fixed_intercept_logistic,
    posterior_dlt_probs,
    posterior_slope,
    wald_pvalue,
)
from .metrics import MetricsReport, classify_selection, compute_pcs, compute_wps, wps_weights
from .scenarios import SCENARIOS, ScenarioTruth, get_scenario, subgroup_of
from .simulate import SimConfig, generate_patient, run_grid, run_replicate

__version__ = "0.1.0"
