// HTML rendering of the trial view. Pure string-in/string-out so the same
// code serves the browser shell, the snapshot tests, and the jsdom
// walkthrough. Every number shown here is read off an API payload.

import type { MtdTable, Recommendation, SelectionEvent, TrialStatus } from "./types.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

const fmtP = (p: number | null): string => (p === null ? "n/a" : p < 0.001 ? "<0.001" : p.toFixed(3));

function patternLabel(pattern: number[], names: string[]): string {
  if (pattern.length === 0) {
    return "all patients";
  }
  return pattern.map((v, i) => `${names[i] ?? `#${i}`}=${v}`).join(", ");
}

export function renderPhaseBadge(status: TrialStatus): string {
  const cls = status.phase === "Final" ? "badge final" : status.phase === "StageII" ? "badge stage2" : "badge stage1";
  return (
    `<span class="${cls}" data-phase="${status.phase}">${status.phase}</span>` +
    `<span class="count">${status.n_patients}/${status.n_max} patients</span>`
  );
}

export function renderPatientsTable(status: TrialStatus): string {
  const head = status.covariates.map((name) => `<th>${escapeHtml(name)}</th>`).join("");
  const rows = status.patients
    .map(
      (p) =>
        `<tr><td>${p.id}</td><td>${p.cohort_index}</td>` +
        p.covariates.map((v) => `<td>${v}</td>`).join("") +
        `<td>${p.dose_level}</td><td>${p.dlt ? "yes" : "no"}</td></tr>`,
    )
    .join("");
  return (
    `<table class="patients"><thead><tr><th>#</th><th>cohort</th>${head}<th>dose</th><th>DLT</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>`
  );
}

function latestEventFor(status: TrialStatus, covariate: number): SelectionEvent | undefined {
  for (let i = status.events.length - 1; i >= 0; i--) {
    const ev = status.events[i];
    if (ev.covariate === covariate && ev.action !== "no_change") {
      return ev;
    }
  }
  return undefined;
}

export function renderCovariateChips(status: TrialStatus): string {
  const chips = status.covariates.map((name, m) => {
    const selected = status.selected.includes(m);
    const ev = latestEventFor(status, m);
    let note = "";
    if (selected && ev && ev.action === "included") {
      note = ` (p=${fmtP(ev.p_value)} &lt; ${fmtP(ev.threshold)})`;
    } else if (!selected && ev && ev.action === "removed") {
      note = ` (removed, p=${fmtP(ev.p_value)} &gt; ${fmtP(ev.threshold)})`;
    }
    const cls = selected ? "chip selected" : "chip";
    const state = selected ? "selected" : "unselected";
    return `<span class="${cls}" data-covariate="${m}" data-state="${state}">${escapeHtml(name)}${
      selected ? " &mdash; selected" : ""
    }${note}</span>`;
  });
  return `<div class="chips">${chips.join("")}</div>`;
}

/**
 * Dose-toxicity curve for one pattern: markers at the discrete dose levels
 * joined by step segments (the design has no doses in between), with a
 * dashed reference line at the target rate.
 */
export function renderCurveSvg(rec: Recommendation, target: number, levels: number[]): string {
  const width = 320;
  const height = 150;
  const pad = 24;
  const xs = levels.map((_, j) => pad + (j * (width - 2 * pad)) / Math.max(levels.length - 1, 1));
  const y = (p: number) => height - pad - p * (height - 2 * pad);
  let path = "";
  rec.probs.forEach((p, j) => {
    path += j === 0 ? `M ${xs[j].toFixed(1)} ${y(p).toFixed(1)}` : ` H ${xs[j].toFixed(1)} V ${y(p).toFixed(1)}`;
  });
  const markers = rec.probs
    .map((p, j) => `<circle cx="${xs[j].toFixed(1)}" cy="${y(p).toFixed(1)}" r="3" data-dose="${levels[j]}" />`)
    .join("");
  const ty = y(target).toFixed(1);
  return (
    `<svg class="curve" viewBox="0 0 ${width} ${height}" role="img">` +
    `<line class="target" x1="${pad}" y1="${ty}" x2="${width - pad}" y2="${ty}" stroke-dasharray="4 3" />` +
    `<path class="steps" d="${path}" fill="none" />` +
    markers +
    `</svg>`
  );
}

export function renderRecommendations(status: TrialStatus): string {
  const cards = status.recommendations
    .map((rec) => {
      const label = patternLabel(rec.pattern, status.selected_names);
      return (
        `<div class="dose-card" data-pattern="${rec.pattern.join("")}" data-dose="${rec.dose}">` +
        `<div class="pattern">${escapeHtml(label)}</div>` +
        `<div class="dose">dose ${rec.dose}</div>` +
        `<div class="basis">${escapeHtml(rec.basis)}</div>` +
        renderCurveSvg(rec, status.target, status.grid.levels) +
        `</div>`
      );
    })
    .join("");
  return `<div class="recommendations">${cards}</div>`;
}

export function renderAuditTimeline(status: TrialStatus): string {
  const items = status.audit
    .map((entry) => {
      const detail = Object.entries(entry)
        .filter(([k]) => k !== "event")
        .map(([k, v]) => `${escapeHtml(k)}=${escapeHtml(JSON.stringify(v))}`)
        .join(" ");
      return `<li class="audit-item" data-event="${escapeHtml(String(entry.event))}">` +
        `<strong>${escapeHtml(String(entry.event))}</strong> ${detail}</li>`;
    })
    .join("");
  return `<ol class="audit">${items}</ol>`;
}

export function renderEnrollForm(status: TrialStatus): string {
  const rows: string[] = [];
  for (let i = 0; i < status.cohort_size; i++) {
    const toggles = status.covariates
      .map(
        (name, m) =>
          `<label>${escapeHtml(name)}<input type="checkbox" data-role="cov" data-patient="${i}" data-cov="${m}"></label>`,
      )
      .join("");
    rows.push(`<fieldset data-field="patient-${i}"><legend>patient ${i + 1}</legend>${toggles}</fieldset>`);
  }
  return (
    `<form id="enroll-form" data-field="covariates">${rows.join("")}` +
    `<button type="button" id="enroll-button">Enroll cohort</button></form>`
  );
}

export function renderOutcomeForm(status: TrialStatus): string {
  if (!status.pending) {
    return "";
  }
  const rows = status.pending.covariates.map((covs, i) => {
    return (
      `<fieldset data-field="dlt-${i}"><legend>patient ${i + 1} @ dose ${status.pending!.doses[i]}` +
      ` [${covs.join(",")}]</legend>` +
      `<label>DLT<input type="radio" name="dlt-${i}" value="1" data-role="dlt" data-patient="${i}"></label>` +
      `<label>no DLT<input type="radio" name="dlt-${i}" value="0" data-role="dlt" data-patient="${i}"></label>` +
      `</fieldset>`
    );
  });
  return (
    `<form id="outcome-form" data-field="dlt">${rows.join("")}` +
    `<button type="button" id="outcome-button">Submit outcomes</button></form>`
  );
}

export function renderFinalizeView(table: MtdTable, covariateNames: string[]): string {
  const names = table.selected.map((m) => covariateNames[m] ?? `#${m}`);
  const cards = table.entries
    .map(
      (entry) =>
        `<div class="mtd-card" data-pattern="${entry.pattern.join("")}" data-dose="${entry.dose}">` +
        `<div class="pattern">${escapeHtml(patternLabel(entry.pattern, names))}</div>` +
        `<div class="dose">MTD: dose ${entry.dose}</div></div>`,
    )
    .join("");
  const note = table.one_sample
    ? `<p class="note">single recommendation${table.fallback ? " (model fallback)" : ""}</p>`
    : `<p class="note">per-pattern recommendations over ${names.map(escapeHtml).join(", ")}</p>`;
  return `<div class="final-cards" data-fallback="${table.fallback}">${note}${cards}</div>`;
}

export interface ErrorView {
  message: string;
  field?: string;
}

export function renderError(error: ErrorView | null): string {
  if (!error) {
    return "";
  }
  const field = error.field ? ` <code class="field">${escapeHtml(error.field)}</code>` : "";
  return `<div class="error-banner" role="alert" data-field="${escapeHtml(error.field ?? "")}">` +
    `${escapeHtml(error.message)}${field}</div>`;
}

export interface AppView {
  status: TrialStatus | null;
  table: MtdTable | null;
  error: ErrorView | null;
}

export function renderApp(view: AppView): string {
  if (!view.status) {
    return `<main class="trial">${renderError(view.error)}<p>loading&hellip;</p></main>`;
  }
  const status = view.status;
  const sections = [
    `<header>${renderPhaseBadge(status)}</header>`,
    renderError(view.error),
    `<section id="selection"><h2>Screened criteria</h2>${renderCovariateChips(status)}</section>`,
    `<section id="recommendations"><h2>Current recommendations</h2>${renderRecommendations(status)}</section>`,
  ];
  if (view.table) {
    sections.push(`<section id="final"><h2>Final MTD table</h2>${renderFinalizeView(view.table, status.covariates)}</section>`);
  } else if (status.phase === "Final") {
    sections.push(`<section id="final"><button type="button" id="finalize-button">Finalize trial</button></section>`);
  } else if (status.pending) {
    sections.push(`<section id="outcomes"><h2>Pending cohort outcomes</h2>${renderOutcomeForm(status)}</section>`);
  } else {
    sections.push(`<section id="enroll"><h2>Enroll next cohort</h2>${renderEnrollForm(status)}</section>`);
  }
  sections.push(`<section id="patients"><h2>Patients</h2>${renderPatientsTable(status)}</section>`);
  sections.push(`<section id="audit"><h2>Audit timeline</h2>${renderAuditTimeline(status)}</section>`);
  return `<main class="trial" data-trial="${escapeHtml(status.trial_id)}">${sections.join("")}</main>`;
}
