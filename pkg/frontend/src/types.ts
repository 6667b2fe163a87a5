// Wire types for the trial-conduct HTTP API. The UI never recomputes any
// statistic: everything rendered comes verbatim from these payloads.

export type Phase = "StageI" | "StageII" | "Final";

export interface GridInfo {
  levels: number[];
  skeleton: number[];
  labels: number[];
}

export interface PatientRow {
  id: number;
  covariates: number[];
  dose_level: number;
  dlt: number;
  cohort_index: number;
}

export interface SelectionEvent {
  cohort_index: number;
  action: "included" | "removed" | "no_change";
  covariate: number | null;
  covariate_name: string | null;
  p_value: number | null;
  threshold: number | null;
}

export interface PendingCohort {
  covariates: number[][];
  doses: number[];
  basis: string;
}

export interface Recommendation {
  pattern: number[];
  dose: number;
  probs: number[];
  basis: string;
}

export interface AuditEntry {
  event: string;
  [key: string]: unknown;
}

export interface TrialStatus {
  trial_id: string;
  phase: Phase;
  n_patients: number;
  n_max: number;
  cohort_size: number;
  target: number;
  covariates: string[];
  selected: number[];
  selected_names: string[];
  labels_updated: boolean;
  grid: GridInfo;
  patients: PatientRow[];
  events: SelectionEvent[];
  pending: PendingCohort | null;
  audit: AuditEntry[];
  recommendations: Recommendation[];
}

export interface EnrollResponse {
  trial_id: string;
  cohort_index: number;
  doses: number[];
  basis: string;
}

export interface MtdEntry {
  pattern: number[];
  dose: number;
}

export interface MtdTable {
  selected: number[];
  fallback: boolean;
  one_sample: boolean;
  entries: MtdEntry[];
  model: {
    dose_coef: number;
    gammas: Record<string, number | null>;
    intercept: number;
    converged: boolean;
    separation: boolean;
  } | null;
}

export interface ApiError {
  error: string;
  field?: string;
  patients_remaining?: number;
}
