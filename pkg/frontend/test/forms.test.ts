import assert from "node:assert/strict";
import { test } from "node:test";
import { JSDOM } from "jsdom";

import { ApiClient } from "../src/api.js";
import { ConductApp } from "../src/app.js";
import { buildEnrollPayload, buildOutcomePayload } from "../src/forms.js";
import type { TrialStatus } from "../src/types.js";
import { fixture } from "./helpers.js";

test("enroll payload accepts a full cohort of 0/1 vectors", () => {
  const result = buildEnrollPayload(
    [
      [0, 1, 0],
      [1, 0, 0],
      [0, 0, 1],
    ],
    3,
    3,
  );
  assert.ok(result.ok);
  assert.deepEqual(result.ok && result.value, [
    [0, 1, 0],
    [1, 0, 0],
    [0, 0, 1],
  ]);
});

test("enroll payload rejects a short cohort", () => {
  const result = buildEnrollPayload([[0, 1, 0]], 3, 3);
  assert.ok(!result.ok);
  assert.equal(!result.ok && result.problem.field, "covariates");
});

test("outcome payload rejects two outcomes when the cohort is three", () => {
  const result = buildOutcomePayload([0, 1], 3);
  assert.ok(!result.ok);
  assert.equal(!result.ok && result.problem.field, "dlt");
});

test("outcome payload names the patient with the unset toggle", () => {
  const result = buildOutcomePayload([0, null, 1], 3);
  assert.ok(!result.ok);
  assert.equal(!result.ok && result.problem.field, "dlt-1");
});

test("incomplete outcome form blocks the request and shows inline validation", async () => {
  const status = fixture<TrialStatus>("status_first_enroll.json");
  const calls: string[] = [];
  const fakeFetch = async (input: string): Promise<Response> => {
    calls.push(input);
    return new Response(JSON.stringify(status), { status: 200 });
  };
  const dom = new JSDOM(`<div id="app"></div>`);
  const root = dom.window.document.getElementById("app")!;
  const app = new ConductApp(root, new ApiClient("http://service", fakeFetch), status.trial_id);
  await app.refresh(); // one GET to paint the pending-outcomes view
  assert.equal(calls.length, 1);

  // set only two of three outcomes, then submit
  const radios = root.querySelectorAll<HTMLInputElement>('input[data-role="dlt"][value="0"]');
  radios[0].checked = true;
  radios[1].checked = true;
  (root.querySelector("#outcome-button") as HTMLButtonElement).click();
  await new Promise((resolve) => setTimeout(resolve, 20));

  assert.equal(calls.length, 1, "no request may be sent for an invalid form");
  const banner = root.querySelector(".error-banner");
  assert.ok(banner, "inline validation banner missing");
  assert.match(banner!.textContent ?? "", /outcome not recorded/);
  assert.equal(banner!.getAttribute("data-field"), "dlt-2");
});

test("server errors are surfaced verbatim with the offending field", async () => {
  const status = fixture<TrialStatus>("status_created.json");
  let first = true;
  const fakeFetch = async (input: string, init?: RequestInit): Promise<Response> => {
    if (first) {
      first = false;
      return new Response(JSON.stringify(status), { status: 200 });
    }
    return new Response(
      JSON.stringify({ detail: { error: "expected 3 patients, got 3 (conflict from server)", field: "covariates" } }),
      { status: 400 },
    );
  };
  const dom = new JSDOM(`<div id="app"></div>`);
  const root = dom.window.document.getElementById("app")!;
  const app = new ConductApp(root, new ApiClient("http://service", fakeFetch), status.trial_id);
  await app.refresh();
  (root.querySelector("#enroll-button") as HTMLButtonElement).click();
  await new Promise((resolve) => setTimeout(resolve, 20));
  const banner = root.querySelector(".error-banner");
  assert.ok(banner);
  assert.match(banner!.textContent ?? "", /conflict from server/);
  assert.equal(banner!.getAttribute("data-field"), "covariates");
});
