// Pure form models: reading toggle state into request payloads, with the
// validation that must block a request before it is ever sent.

export interface FormProblem {
  field: string;
  message: string;
}

export type FormResult<T> = { ok: true; value: T } | { ok: false; problem: FormProblem };

/**
 * Covariate toggles for one enrollment cohort: values[i][m] is patient i's
 * m-th criterion. Every patient needs a full 0/1 vector.
 */
export function buildEnrollPayload(
  values: (number | null)[][],
  cohortSize: number,
  numCovariates: number,
): FormResult<number[][]> {
  if (values.length !== cohortSize) {
    return {
      ok: false,
      problem: { field: "covariates", message: `expected ${cohortSize} patients, got ${values.length}` },
    };
  }
  const rows: number[][] = [];
  for (let i = 0; i < values.length; i++) {
    const row = values[i];
    if (row.length !== numCovariates) {
      return {
        ok: false,
        problem: { field: `patient-${i}`, message: `patient ${i + 1}: expected ${numCovariates} criteria` },
      };
    }
    for (const v of row) {
      if (v !== 0 && v !== 1) {
        return {
          ok: false,
          problem: { field: `patient-${i}`, message: `patient ${i + 1}: criteria must be 0 or 1` },
        };
      }
    }
    rows.push(row as number[]);
  }
  return { ok: true, value: rows };
}

/** DLT toggles for the pending cohort; all of them must be set before submit. */
export function buildOutcomePayload(values: (number | null)[], cohortSize: number): FormResult<number[]> {
  if (values.length !== cohortSize) {
    return {
      ok: false,
      problem: { field: "dlt", message: `expected ${cohortSize} outcomes, got ${values.length}` },
    };
  }
  const unset = values.findIndex((v) => v !== 0 && v !== 1);
  if (unset >= 0) {
    return {
      ok: false,
      problem: { field: `dlt-${unset}`, message: `patient ${unset + 1}: outcome not recorded` },
    };
  }
  return { ok: true, value: values as number[] };
}
