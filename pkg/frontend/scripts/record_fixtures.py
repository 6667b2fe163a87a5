#!/usr/bin/env python3
"""Record API fixtures for the UI snapshot tests from a real in-process service.

Drives a scripted conduct session whose outcome stream reliably produces a
covariate selection event, then dumps the payloads the UI tests snapshot:
the freshly created trial, the first enrolled cohort (start-dose cards), a
status after a selection event (chip flip), and the final MTD card set.
"""

import json
import sys
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from pcrm.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "test" / "fixtures"

DESIGN = {
    "doses": 6,
    "covariates": ["z1", "z2", "z3"],
    "target": 0.25,
    "stage_one": 6,
    "n_max": 18,
    "cohort_size": 3,
    "start_dose": 2,
    "alpha": 0.20,
    "calibration": {"nu": 2, "delta": 0.08},
}

# outcomes keyed to z2 but not perfectly separated, so the screening fit
# stays regular and the second criterion gets picked up at the third cycle
COHORTS = [
    {"covariates": [[0, 1, 0], [1, 0, 0], [0, 0, 1]], "dlt": [1, 0, 0]},
    {"covariates": [[0, 1, 1], [0, 0, 0], [1, 1, 0]], "dlt": [0, 0, 1]},
    {"covariates": [[0, 1, 0], [1, 0, 1], [0, 0, 0]], "dlt": [1, 1, 0]},
    {"covariates": [[1, 1, 0], [0, 0, 1], [0, 1, 0]], "dlt": [0, 0, 1]},
    {"covariates": [[0, 0, 0], [0, 1, 0], [1, 0, 0]], "dlt": [0, 1, 1]},
    {"covariates": [[0, 1, 0], [0, 0, 0], [1, 1, 1]], "dlt": [0, 0, 1]},
]


def dump(name: str, payload) -> None:
    path = FIXTURES / name
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(f"wrote {path}")


def main() -> int:
    FIXTURES.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        with TestClient(create_app(tmp)) as client:
            created = client.post("/trials", json=DESIGN).json()
            trial_id = created["trial_id"]
            # strip the random token so fixtures are stable
            created["trial_id"] = "fixture-trial"
            created["status"]["trial_id"] = "fixture-trial"
            dump("status_created.json", created["status"])

            first = client.post(f"/trials/{trial_id}/cohort", json={"covariates": COHORTS[0]["covariates"]})
            assert first.json()["doses"] == [2, 2, 2], first.json()
            status = client.get(f"/trials/{trial_id}").json()
            status["trial_id"] = "fixture-trial"
            dump("status_first_enroll.json", status)

            selection_status = None
            for i, cohort in enumerate(COHORTS):
                if i > 0:
                    client.post(f"/trials/{trial_id}/cohort", json={"covariates": cohort["covariates"]})
                client.post(f"/trials/{trial_id}/outcomes", json={"dlt": cohort["dlt"]})
                status = client.get(f"/trials/{trial_id}").json()
                if selection_status is None and status["selected"]:
                    status["trial_id"] = "fixture-trial"
                    selection_status = status

            assert selection_status is not None, "no covariate was ever selected; adjust the stream"
            assert 1 in selection_status["selected"], selection_status["selected"]
            assert any(
                ev["action"] == "included" and ev["covariate"] == 1 for ev in selection_status["events"]
            )
            dump("status_after_selection.json", selection_status)

            final_status = client.get(f"/trials/{trial_id}").json()
            assert final_status["phase"] == "Final", final_status["phase"]
            final_status["trial_id"] = "fixture-trial"
            dump("status_final.json", final_status)

            table = client.post(f"/trials/{trial_id}/finalize").json()["mtd_table"]
            assert len(table["entries"]) == 2 ** len(table["selected"])
            dump("finalize.json", table)
    return 0


if __name__ == "__main__":
    sys.exit(main())
