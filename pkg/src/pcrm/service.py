"""HTTP trial-conduct service with crash-safe persistent sessions.

Every mutation is written to the trial's state file before the response is
returned, so replaying the data directory reconstructs each session exactly.
Requests for the same trial are serialized; distinct trials are independent.
"""

from __future__ import annotations

import json
import math
import os
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from . import design as pdesign
from .core import (
    PatientRecord,
    Phase,
    TrialError,
    TrialState,
    config_from_dict,
    state_from_dict,
    state_to_dict,
)
from .crm import crm_recommend

SESSION_VERSION = "pcrm-state-v1"


@dataclass
class TrialSession:
    trial_id: str
    state: TrialState
    pending: list[tuple[int, ...]] | None = None
    pending_doses: list[int] | None = None
    pending_basis: str | None = None
    audit: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": SESSION_VERSION,
            "trial_id": self.trial_id,
            "state": state_to_dict(self.state),
            "pending": None
            if self.pending is None
            else {
                "covariates": [list(p) for p in self.pending],
                "doses": self.pending_doses,
                "basis": self.pending_basis,
            },
            "audit": self.audit,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TrialSession":
        pending = data.get("pending")
        return cls(
            trial_id=data["trial_id"],
            state=state_from_dict(data["state"]),
            pending=None if pending is None else [tuple(int(v) for v in p) for p in pending["covariates"]],
            pending_doses=None if pending is None else [int(d) for d in pending["doses"]],
            pending_basis=None if pending is None else pending.get("basis"),
            audit=list(data.get("audit", [])),
        )


class TrialStore:
    """Directory-backed session store; atomic write-before-respond."""

    def __init__(self, data_dir: Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, TrialSession] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry_lock = threading.Lock()
        for path in sorted(self.data_dir.glob("trial_*.json")):
            session = TrialSession.from_dict(json.loads(path.read_text()))
            self._sessions[session.trial_id] = session
            self._locks[session.trial_id] = threading.Lock()

    def _path(self, trial_id: str) -> Path:
        return self.data_dir / f"trial_{trial_id}.json"

    def create(self, state: TrialState) -> TrialSession:
        with self._registry_lock:
            trial_id = secrets.token_hex(8)
            while trial_id in self._sessions:
                trial_id = secrets.token_hex(8)
            session = TrialSession(trial_id=trial_id, state=state)
            self._sessions[trial_id] = session
            self._locks[trial_id] = threading.Lock()
        self.save(session)
        return session

    def lock(self, trial_id: str) -> threading.Lock:
        with self._registry_lock:
            if trial_id not in self._locks:
                raise KeyError(trial_id)
            return self._locks[trial_id]

    def get(self, trial_id: str) -> TrialSession:
        try:
            return self._sessions[trial_id]
        except KeyError:
            raise KeyError(trial_id) from None

    def save(self, session: TrialSession) -> None:
        path = self._path(session.trial_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(session.to_dict(), indent=2, sort_keys=True))
        os.replace(tmp, path)

    def ids(self) -> list[str]:
        return sorted(self._sessions)


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def _status_payload(session: TrialSession) -> dict:
    state = session.state
    config = state.config
    payload = {
        "trial_id": session.trial_id,
        "phase": state.phase.value,
        "n_patients": state.n_patients,
        "n_max": config.n_max,
        "cohort_size": config.cohort_size,
        "target": config.target,
        "covariates": list(config.covariates.names),
        "selected": list(state.selected),
        "selected_names": [config.covariates.names[m] for m in state.selected],
        "labels_updated": state.labels_updated,
        "grid": {
            "levels": list(state.grid.levels),
            "skeleton": list(state.grid.skeleton),
            "labels": list(state.grid.labels),
        },
        "patients": [
            {
                "id": rec.id,
                "covariates": list(rec.covariates),
                "dose_level": rec.dose_level,
                "dlt": rec.dlt,
                "cohort_index": rec.cohort_index,
            }
            for rec in state.patients
        ],
        "events": [
            {
                "cohort_index": ev.cohort_index,
                "action": ev.action,
                "covariate": ev.covariate,
                "covariate_name": None if ev.covariate is None else config.covariates.names[ev.covariate],
                "p_value": _clean(ev.p_value),
                "threshold": _clean(ev.threshold),
            }
            for ev in state.events
        ],
        "pending": None
        if session.pending is None
        else {
            "covariates": [list(p) for p in session.pending],
            "doses": session.pending_doses,
            "basis": session.pending_basis,
        },
        "audit": session.audit,
        "recommendations": _recommendations(state),
    }
    return payload


def _recommendations(state: TrialState) -> list[dict]:
    """Current per-pattern dose picks and toxicity curves for display."""
    config = state.config
    out = []
    if state.phase != Phase.FINAL and state.n_patients == 0:
        probs = list(state.grid.skeleton)
        return [{"pattern": [], "dose": config.start_dose, "probs": probs, "basis": "start-dose"}]
    try:
        model = pdesign.current_model(state) if state.selected else None
        if model is not None and model.usable_for_dosing:
            import itertools

            for pattern in itertools.product((0, 1), repeat=len(state.selected)):
                probs = model.predict(state.grid.labels, pattern)
                proposed = pdesign.recommend_for_pattern(model, state.grid.labels, pattern, config.target)
                dose = pdesign._clamp(state, proposed, pattern) if state.phase != Phase.FINAL else proposed
                out.append(
                    {
                        "pattern": list(pattern),
                        "dose": dose,
                        "probs": [float(p) for p in probs],
                        "basis": "covariate-model",
                    }
                )
            return out
        rec = crm_recommend(state)
        return [
            {
                "pattern": [],
                "dose": rec.dose_level,
                "probs": [float(p) for p in rec.probs],
                "basis": "one-sample",
            }
        ]
    except Exception:
        return []


def _error(status: int, message: str, **extra):
    raise HTTPException(status_code=status, detail={"error": message, **extra})


def create_app(data_dir: Path | str | None = None) -> FastAPI:
    data_dir = Path(data_dir or os.environ.get("PCRM_DATA_DIR", "./pcrm-data"))
    app = FastAPI(title="pcrm trial conduct service")
    store = TrialStore(data_dir)
    app.state.store = store

    @app.exception_handler(TrialError)
    async def trial_error_handler(request: Request, exc: TrialError):
        return JSONResponse(status_code=400, content={"detail": {"error": str(exc)}})

    def _session_or_404(trial_id: str) -> TrialSession:
        try:
            return store.get(trial_id)
        except KeyError:
            _error(404, f"unknown trial {trial_id!r}")

    @app.post("/trials", status_code=201)
    def create_trial(body: dict):
        try:
            config = config_from_dict(body)
            state = pdesign.new_trial(config)
        except (TrialError, KeyError, TypeError, ValueError) as exc:
            _error(400, f"invalid design: {exc}")
        session = store.create(state)
        session.audit.append({"event": "created", "n_max": config.n_max})
        store.save(session)
        return {"trial_id": session.trial_id, "status": _status_payload(session)}

    @app.post("/trials/{trial_id}/cohort")
    def enroll_cohort(trial_id: str, body: dict):
        session = _session_or_404(trial_id)
        with store.lock(trial_id):
            state = session.state
            if session.pending is not None:
                _error(409, "outcomes for the current cohort have not been submitted")
            if state.phase == Phase.FINAL:
                _error(409, "trial is complete")
            covariates = body.get("covariates")
            if not isinstance(covariates, list):
                _error(400, "body must contain 'covariates': a list of 0/1 vectors", field="covariates")
            if len(covariates) != state.config.cohort_size:
                _error(
                    400,
                    f"expected {state.config.cohort_size} patients, got {len(covariates)}",
                    field="covariates",
                )
            patterns = []
            for i, vec in enumerate(covariates):
                if (
                    not isinstance(vec, list)
                    or len(vec) != state.config.num_covariates
                    or any(v not in (0, 1) for v in vec)
                ):
                    _error(400, f"patient {i}: covariates must be a 0/1 vector of length "
                           f"{state.config.num_covariates}", field="covariates")
                patterns.append(tuple(int(v) for v in vec))
            try:
                rec = pdesign.recommend_cohort(state, patterns)
            except TrialError as exc:
                _error(409, str(exc))
            session.pending = patterns
            session.pending_doses = list(rec.doses)
            session.pending_basis = rec.basis
            session.audit.append(
                {
                    "event": "cohort_enrolled",
                    "cohort_index": state.cohort_count,
                    "covariates": [list(p) for p in patterns],
                    "doses": list(rec.doses),
                    "basis": rec.basis,
                }
            )
            store.save(session)
            return {
                "trial_id": trial_id,
                "cohort_index": state.cohort_count,
                "doses": list(rec.doses),
                "basis": rec.basis,
            }

    @app.post("/trials/{trial_id}/outcomes")
    def submit_outcomes(trial_id: str, body: dict):
        session = _session_or_404(trial_id)
        with store.lock(trial_id):
            state = session.state
            if session.pending is None:
                _error(409, "no cohort is awaiting outcomes; enroll a cohort first")
            dlt = body.get("dlt")
            if not isinstance(dlt, list) or len(dlt) != state.config.cohort_size:
                _error(400, f"body must contain 'dlt': a list of {state.config.cohort_size} 0/1 values", field="dlt")
            if any(v not in (0, 1) for v in dlt):
                _error(400, "dlt values must be 0 or 1", field="dlt")
            cohort_index = state.cohort_count
            records = [
                PatientRecord(
                    id=state.n_patients + i + 1,
                    covariates=session.pending[i],
                    dose_level=session.pending_doses[i],
                    dlt=int(dlt[i]),
                    cohort_index=cohort_index,
                )
                for i in range(state.config.cohort_size)
            ]
            try:
                new_state, events = pdesign.step(state, records)
            except TrialError as exc:
                _error(409, str(exc))
            session.state = new_state
            session.pending = None
            session.pending_doses = None
            session.pending_basis = None
            session.audit.append(
                {
                    "event": "outcomes_submitted",
                    "cohort_index": cohort_index,
                    "dlt": [int(v) for v in dlt],
                    "selection_events": [
                        {
                            "action": ev.action,
                            "covariate": ev.covariate,
                            "p_value": _clean(ev.p_value),
                            "threshold": _clean(ev.threshold),
                        }
                        for ev in events
                    ],
                }
            )
            store.save(session)
            return {"trial_id": trial_id, "status": _status_payload(session)}

    @app.get("/trials/{trial_id}")
    def trial_status(trial_id: str):
        session = _session_or_404(trial_id)
        with store.lock(trial_id):
            return _status_payload(session)

    @app.post("/trials/{trial_id}/finalize")
    def finalize_trial(trial_id: str):
        session = _session_or_404(trial_id)
        with store.lock(trial_id):
            state = session.state
            if state.phase != Phase.FINAL:
                _error(
                    409,
                    "trial has not reached its total sample size",
                    patients_remaining=state.config.n_max - state.n_patients,
                )
            table = pdesign.finalize(state)
            payload = table.to_dict()
            session.audit.append({"event": "finalized", "table": payload})
            store.save(session)
            return {"trial_id": trial_id, "mtd_table": payload}

    @app.get("/trials")
    def list_trials():
        return {"trials": store.ids()}

    return app


def serve(port: int, data_dir: Path | str) -> None:
    """Run the service under uvicorn (blocking)."""
    import uvicorn

    app = create_app(data_dir)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="info")
