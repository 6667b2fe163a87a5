// Controller: owns the session token, talks to the service, re-renders from
// server responses only. No optimistic updates, no client-side statistics.

import { ApiClient, ApiRequestError } from "./api.js";
import { buildEnrollPayload, buildOutcomePayload } from "./forms.js";
import { renderApp, type AppView, type ErrorView } from "./render.js";
import type { TrialStatus } from "./types.js";

export class ConductApp {
  private readonly api: ApiClient;
  private readonly trialId: string;
  private readonly root: Element;
  private view: AppView = { status: null, table: null, error: null };

  constructor(root: Element, api: ApiClient, trialId: string) {
    this.root = root;
    this.api = api;
    this.trialId = trialId;
  }

  get status(): TrialStatus | null {
    return this.view.status;
  }

  async refresh(): Promise<void> {
    this.view = { ...this.view, status: await this.api.status(this.trialId), error: null };
    this.render();
  }

  private render(): void {
    this.root.innerHTML = renderApp(this.view);
    this.wire();
  }

  private fail(error: ErrorView): void {
    this.view = { ...this.view, error };
    this.render();
  }

  private wire(): void {
    const enroll = this.root.querySelector("#enroll-button");
    if (enroll) {
      enroll.addEventListener("click", () => void this.enroll());
    }
    const outcomes = this.root.querySelector("#outcome-button");
    if (outcomes) {
      outcomes.addEventListener("click", () => void this.submitOutcomes());
    }
    const finalize = this.root.querySelector("#finalize-button");
    if (finalize) {
      finalize.addEventListener("click", () => void this.finalize());
    }
  }

  readEnrollToggles(): (number | null)[][] {
    const status = this.view.status!;
    const rows: (number | null)[][] = [];
    for (let i = 0; i < status.cohort_size; i++) {
      const row: (number | null)[] = [];
      for (let m = 0; m < status.covariates.length; m++) {
        const box = this.root.querySelector<HTMLInputElement>(
          `input[data-role="cov"][data-patient="${i}"][data-cov="${m}"]`,
        );
        row.push(box ? (box.checked ? 1 : 0) : null);
      }
      rows.push(row);
    }
    return rows;
  }

  readOutcomeToggles(): (number | null)[] {
    const status = this.view.status!;
    const values: (number | null)[] = [];
    for (let i = 0; i < status.cohort_size; i++) {
      const checked = this.root.querySelector<HTMLInputElement>(`input[data-role="dlt"][name="dlt-${i}"]:checked`);
      values.push(checked ? Number(checked.value) : null);
    }
    return values;
  }

  async enroll(): Promise<void> {
    const status = this.view.status;
    if (!status) {
      return;
    }
    const payload = buildEnrollPayload(this.readEnrollToggles(), status.cohort_size, status.covariates.length);
    if (!payload.ok) {
      this.fail({ message: payload.problem.message, field: payload.problem.field });
      return; // invalid form: no request is sent
    }
    try {
      await this.api.enrollCohort(this.trialId, payload.value);
      await this.refresh();
    } catch (err) {
      this.surface(err);
    }
  }

  async submitOutcomes(): Promise<void> {
    const status = this.view.status;
    if (!status) {
      return;
    }
    const payload = buildOutcomePayload(this.readOutcomeToggles(), status.cohort_size);
    if (!payload.ok) {
      this.fail({ message: payload.problem.message, field: payload.problem.field });
      return; // invalid form: no request is sent
    }
    try {
      const resp = await this.api.submitOutcomes(this.trialId, payload.value);
      this.view = { ...this.view, status: resp.status, error: null };
      this.render();
    } catch (err) {
      this.surface(err);
    }
  }

  async finalize(): Promise<void> {
    try {
      const resp = await this.api.finalize(this.trialId);
      this.view = { ...this.view, table: resp.mtd_table, error: null };
      this.render();
    } catch (err) {
      this.surface(err);
    }
  }

  private surface(err: unknown): void {
    if (err instanceof ApiRequestError) {
      this.fail({ message: err.detail.error, field: err.detail.field });
    } else {
      this.fail({ message: String(err) });
    }
  }
}

/** Browser bootstrap: ?api=<base>&trial=<id>. */
export async function boot(doc: Document, location: Location): Promise<ConductApp | null> {
  const params = new URLSearchParams(location.search);
  const base = params.get("api") ?? `${location.protocol}//${location.host}`;
  const trialId = params.get("trial");
  const root = doc.getElementById("app");
  if (!root) {
    return null;
  }
  if (!trialId) {
    root.innerHTML = `<p class="error-banner">missing ?trial=&lt;id&gt; in the URL</p>`;
    return null;
  }
  const app = new ConductApp(root, new ApiClient(base), trialId);
  await app.refresh();
  return app;
}
