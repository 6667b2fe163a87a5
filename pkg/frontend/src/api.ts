import type { ApiError, EnrollResponse, MtdTable, TrialStatus } from "./types.js";

export class ApiRequestError extends Error {
  readonly status: number;
  readonly detail: ApiError;

  constructor(status: number, detail: ApiError) {
    super(detail.error);
    this.status = status;
    this.detail = detail;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the five conduct endpoints. */
export class ApiClient {
  private readonly base: string;
  private readonly fetchFn: FetchLike;

  constructor(base: string, fetchFn?: FetchLike) {
    this.base = base.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchFn(`${this.base}${path}`, {
      method,
      headers: body === undefined ? undefined : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const payload = await resp.json();
    if (!resp.ok) {
      const detail: ApiError =
        payload && typeof payload === "object" && "detail" in payload
          ? (payload.detail as ApiError)
          : { error: String(payload) };
      throw new ApiRequestError(resp.status, detail);
    }
    return payload as T;
  }

  createTrial(design: Record<string, unknown>): Promise<{ trial_id: string; status: TrialStatus }> {
    return this.request("POST", "/trials", design);
  }

  status(trialId: string): Promise<TrialStatus> {
    return this.request("GET", `/trials/${trialId}`);
  }

  enrollCohort(trialId: string, covariates: number[][]): Promise<EnrollResponse> {
    return this.request("POST", `/trials/${trialId}/cohort`, { covariates });
  }

  submitOutcomes(trialId: string, dlt: number[]): Promise<{ trial_id: string; status: TrialStatus }> {
    return this.request("POST", `/trials/${trialId}/outcomes`, { dlt });
  }

  finalize(trialId: string): Promise<{ trial_id: string; mtd_table: MtdTable }> {
    return this.request("POST", `/trials/${trialId}/finalize`);
  }
}
