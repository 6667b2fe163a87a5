"""Acceptance suite: published operating characteristics at their stated
tolerances, oracle cross-checks, and the core behavioral properties.

Order matters: the oracle suites run before the table replications. Each
criterion prints one PASS/FAIL line (run pytest with -s or -rA to see them).
The table cells are computed once per session at 2000 replicates with the
shipped default master seed.
"""

import hashlib
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from fastapi.testclient import TestClient

from pcrm import (
    CovariateSpec,
    CrmPrior,
    DesignConfig,
    PatientRecord,
    SimConfig,
    crm_recommend,
    finalize,
    fit_fixed_intercept_logistic,
    get_scenario,
    new_trial,
    posterior_slope,
    recommend_cohort,
    run_grid,
    step,
    wps_weights,
)
from pcrm.core import clamp_no_skip
from pcrm.estimation import loglik, score
from pcrm.service import create_app

from conftest import FROZEN_LABELS
from oracles import brute_posterior_mean, grid_mle_2d

REPLICATES = 2000
MASTER_SEED = 20240607
SELECTION_TOL = 5.0  # percentage points
PCS_TOL = 0.05
WPS_TOL = 0.05


def report(name: str, ok: bool, detail: str = "") -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))


def check(name, ok, detail=""):
    report(name, ok, detail)
    assert ok, f"{name} failed: {detail}"


# --- oracle suites (run before the tables) ----------------------------------


class TestOracleSuites:
    def test_a_mle_grid_oracle_100_datasets(self, rng):
        checked = 0
        attempts = 0
        worst = 0.0
        while checked < 100 and attempts < 600:
            attempts += 1
            n = int(rng.integers(12, 32))
            labels = np.asarray(FROZEN_LABELS)[rng.integers(0, 4, size=n)]
            z = rng.integers(0, 2, size=n).astype(float)
            p = 1.0 / (1.0 + np.exp(-(3.0 + rng.uniform(0.5, 2.0) * labels + rng.uniform(-1.5, 2.5) * z)))
            y = (rng.random(n) < p).astype(float)
            fit = fit_fixed_intercept_logistic(labels, z, y)
            if not fit.converged or fit.separation:
                continue
            if abs(fit.dose_coef) > 8 or abs(fit.gammas[0]) > 8:
                continue
            b_star, g_star = grid_mle_2d(labels, z, y)
            worst = max(worst, abs(fit.dose_coef - b_star), abs(fit.gammas[0] - g_star))
            assert fit.dose_coef == pytest.approx(b_star, abs=1e-4)
            assert fit.gammas[0] == pytest.approx(g_star, abs=1e-4)
            checked += 1
        check("oracle (a): logistic MLE vs grid search on 100 datasets",
              checked == 100, f"worst |diff| {worst:.2e} (tol 1e-4)")

    def test_b_posterior_vs_trapezoid_100_histories(self, rng):
        prior = CrmPrior()
        labels = np.asarray(FROZEN_LABELS)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 40))
            idx = rng.integers(0, 6, size=n)
            dlt = (rng.random(n) < 0.3).astype(int)
            data = list(zip(labels[idx], dlt))
            got = posterior_slope(data, prior)
            want = brute_posterior_mean(data)
            worst = max(worst, abs(got - want))
            assert got == pytest.approx(want, abs=1e-6)
        check("oracle (b): posterior slope vs fine-grid integration on 100 histories",
              True, f"worst |diff| {worst:.2e} (tol 1e-6)")

    def test_c_analytic_gradient_vs_finite_differences(self, rng):
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(6, 40))
            labels = np.asarray(FROZEN_LABELS)[rng.integers(0, 6, size=n)]
            Z = rng.integers(0, 2, size=(n, 2)).astype(float)
            y = (rng.random(n) < 0.35).astype(float)
            theta = rng.normal(0, 1, size=3)
            analytic = score(theta, labels, Z, y)
            h = 1e-5
            for j in range(3):
                up, dn = theta.copy(), theta.copy()
                up[j] += h
                dn[j] -= h
                fd = (loglik(up, labels, Z, y) - loglik(dn, labels, Z, y)) / (2 * h)
                rel = abs(analytic[j] - fd) / max(1.0, abs(fd))
                worst = max(worst, rel)
                assert rel < 1e-6
        check("oracle (c): analytic gradient vs central differences", True,
              f"worst rel diff {worst:.2e} (tol 1e-6)")

    def test_d_wps_weights_scenario5_exact(self):
        weights = wps_weights(get_scenario(5).rows[0], 0.25)
        want = (0.66, 1.00, 0.60, 0.30, 0.10, 0.00)
        ok = bool(np.allclose(weights, want, atol=1e-12))
        check("oracle (d): scenario-5 WPS weights exactly (0.66, 1, 0.6, 0.3, 0.1, 0)", ok,
              f"got {tuple(round(w, 6) for w in weights)}")

    def test_e_generator_goodness_of_fit(self, rng):
        from scipy import stats

        n = 100_000
        worst_p = 1.0
        for sid in (1, 2, 3, 4, 5):
            scenario = get_scenario(sid)
            for k in range(scenario.num_subgroups):
                covs = tuple(1 - k if m == 1 else 0 for m in range(3))
                for dose in range(1, 7):
                    p = scenario.dlt_probability(covs, dose)
                    hits = int((rng.random(n) < p).sum())
                    stat = (hits - n * p) ** 2 / (n * p * (1 - p))
                    pval = float(stats.chi2.sf(stat, df=1))
                    worst_p = min(worst_p, pval)
                    assert pval > 1e-6
        check("oracle (e): generator goodness-of-fit at 1e5 draws per cell", True,
              f"min chi-square p {worst_p:.4f}")


# --- property suites ----------------------------------------------------------


class TestPropertySuites:
    def test_no_skip_contiguity(self, rng):
        for _ in range(300):
            start = int(rng.integers(1, 7))
            tried = {start}
            for proposed in rng.integers(1, 7, size=25):
                dose = clamp_no_skip(tried, int(proposed), 6)
                if dose > max(tried):
                    assert dose == max(tried) + 1
                tried.add(dose)
        check("property: escalation never skips an untried dose", True)

    def test_coherence_after_all_toxic_cohort(self, default_config, rng):
        for _ in range(25):
            n = int(rng.integers(0, 8)) * 3
            doses = list(rng.integers(1, 7, size=n)) + [3, 3, 3]
            dlts = list(rng.integers(0, 2, size=n)) + [1, 1, 1]
            state = new_trial(default_config)
            patients = tuple(
                PatientRecord(id=i + 1, covariates=(0, 0, 0), dose_level=int(d), dlt=int(y), cohort_index=i // 3)
                for i, (d, y) in enumerate(zip(doses, dlts))
            )
            state = replace(state, patients=patients)
            assert crm_recommend(state).dose_level <= 3
        check("property: no escalation after an all-DLT cohort", True)

    def test_alpha_zero_fallback_equivalence(self, default_config):
        config = replace(default_config, alpha=0.0, n_max=45)
        u = np.random.default_rng(777).random(100)
        truth = {1: 0.05, 2: 0.12, 3: 0.25, 4: 0.42, 5: 0.58, 6: 0.70}
        covs_pool = np.random.default_rng(13).integers(0, 2, size=(100, 3))

        def run(cfg, m):
            state = new_trial(cfg)
            for c in range(15):
                covs = [tuple(int(v) for v in covs_pool[c * 3 + i][:m]) for i in range(3)]
                rec = recommend_cohort(state, covs)
                records = [
                    PatientRecord(
                        id=state.n_patients + i + 1,
                        covariates=covs[i],
                        dose_level=rec.doses[i],
                        dlt=int(u[state.n_patients + i] < truth[rec.doses[i]]),
                        cohort_index=c,
                    )
                    for i in range(3)
                ]
                state, _ = step(state, records)
            return [p.dose_level for p in state.patients], finalize(state)

        pcrm_doses, pcrm_table = run(config, 3)
        os_doses, os_table = run(replace(config, covariates=CovariateSpec.of(0)), 0)
        ok = pcrm_doses == os_doses and pcrm_table.entries[0][1] == os_table.entries[0][1]
        check("property: alpha=0 collapses to the label-updated one-sample CRM", ok)

    def test_bit_identical_rerun_any_thread_count(self):
        design = DesignConfig(doses=6, covariates=CovariateSpec.of(3), n_max=30)
        conf = lambda threads: SimConfig(
            design=design, scenarios=(4,), prevalences=((0.5, 0.5, 0.5),), n_max_grid=(30,),
            replicates=60, comparator="both", master_seed=31415, threads=threads,
        )
        serial = [r.to_dict() for r in run_grid(conf(1))]
        parallel = [r.to_dict() for r in run_grid(conf(2))]
        ok = serial == parallel
        check("property: run_grid bit-identical at any worker count", ok)

    def test_crash_replay_identity(self, tmp_path):
        design = {
            "doses": 6, "covariates": 3, "stage_one": 6, "n_max": 12, "cohort_size": 3,
            "calibration": {"nu": 2, "delta": 0.08},
        }
        cohorts = [
            ([[0, 1, 0], [1, 0, 0], [0, 0, 1]], [0, 0, 0]),
            ([[1, 1, 0], [0, 0, 0], [0, 1, 1]], [0, 1, 0]),
        ]
        data_dir = tmp_path / "svc"
        with TestClient(create_app(data_dir)) as client:
            trial_id = client.post("/trials", json=design).json()["trial_id"]
            for covs, dlt in cohorts:
                client.post(f"/trials/{trial_id}/cohort", json={"covariates": covs})
                client.post(f"/trials/{trial_id}/outcomes", json={"dlt": dlt})
            before = client.get(f"/trials/{trial_id}").json()
        digest = hashlib.sha256((data_dir / f"trial_{trial_id}.json").read_bytes()).hexdigest()
        with TestClient(create_app(data_dir)) as client:
            after = client.get(f"/trials/{trial_id}").json()
        digest2 = hashlib.sha256((data_dir / f"trial_{trial_id}.json").read_bytes()).hexdigest()
        ok = before == after and digest == digest2
        check("property: service crash-replay reconstructs identical state", ok)


# --- published operating characteristics --------------------------------------


@pytest.fixture(scope="module")
def grid():
    """Every cell the published-value criteria need, computed once."""
    design = DesignConfig(doses=6, covariates=CovariateSpec.of(3), n_max=45)
    cells = {}

    pcrm = SimConfig(
        design=design, scenarios=(1, 2, 3, 4, 5),
        prevalences=((0.5, 0.5, 0.5), (0.25, 0.25, 0.25)),
        n_max_grid=(45, 60, 72), replicates=REPLICATES, comparator="pcrm",
        master_seed=MASTER_SEED, threads=2,
    )
    for r in run_grid(pcrm):
        cells[(r.scenario_id, r.prevalence[0], r.n_max, "pcrm")] = r

    spot = SimConfig(
        design=design, scenarios=(1,), prevalences=((0.5, 0.5, 0.5),),
        n_max_grid=(30,), replicates=REPLICATES, comparator="pcrm",
        master_seed=MASTER_SEED, threads=2,
    )
    for r in run_grid(spot):
        cells[(r.scenario_id, r.prevalence[0], r.n_max, "pcrm")] = r

    one_sample = SimConfig(
        design=design, scenarios=(4, 5), prevalences=((0.5, 0.5, 0.5),),
        n_max_grid=(72,), replicates=REPLICATES, comparator="one-sample",
        master_seed=MASTER_SEED, threads=2,
    )
    for r in run_grid(one_sample):
        cells[(r.scenario_id, r.prevalence[0], r.n_max, "one-sample")] = r
    return cells


def _selection(cells, scenario, prev, n_max):
    r = cells[(scenario, prev, n_max, "pcrm")]
    return r.selection_pct["none"] if scenario == 5 else r.selection_pct["correct_only"]


# criteria-selection targets: scenario -> (prev, n_max) -> percent
TABLE1 = {
    (1, 0.5, 45): 48, (2, 0.5, 45): 44, (3, 0.5, 45): 68, (4, 0.5, 45): 73, (5, 0.5, 45): 56,
    (1, 0.25, 45): 43, (2, 0.25, 45): 41, (3, 0.25, 45): 67, (4, 0.25, 45): 79, (5, 0.25, 45): 63,
}
APPENDIX23 = {
    (1, 0.5, 60): 57, (2, 0.5, 60): 52, (3, 0.5, 60): 76, (4, 0.5, 60): 76, (5, 0.5, 60): 56,
    (1, 0.25, 60): 50, (2, 0.25, 60): 48, (3, 0.25, 60): 73, (4, 0.25, 60): 82, (5, 0.25, 60): 58,
    (1, 0.5, 72): 64, (2, 0.5, 72): 58, (3, 0.5, 72): 78, (4, 0.5, 72): 77, (5, 0.5, 72): 56,
    (1, 0.25, 72): 54, (2, 0.25, 72): 52, (3, 0.25, 72): 76, (4, 0.25, 72): 83, (5, 0.25, 72): 55,
}


class TestCriteriaSelectionTables:
    def test_table1_n45(self, grid):
        worst = ("", 0.0)
        for (sid, prev, n), target in TABLE1.items():
            got = _selection(grid, sid, prev, n)
            diff = abs(got - target)
            if diff > worst[1]:
                worst = (f"S{sid} prev={prev}", diff)
            assert diff <= SELECTION_TOL, f"S{sid} prev={prev} N={n}: {got:.1f} vs {target} (tol 5pp)"
        check("criteria selection, N=45 (both prevalences)", True,
              f"worst cell {worst[0]} off by {worst[1]:.1f}pp (tol 5pp)")

    def test_appendix_tables_2_3_n60_n72(self, grid):
        worst = ("", 0.0)
        for (sid, prev, n), target in APPENDIX23.items():
            got = _selection(grid, sid, prev, n)
            diff = abs(got - target)
            if diff > worst[1]:
                worst = (f"S{sid} prev={prev} N={n}", diff)
            assert diff <= SELECTION_TOL, f"S{sid} prev={prev} N={n}: {got:.1f} vs {target} (tol 5pp)"
        check("criteria selection, N=60 and N=72 (both prevalences)", True,
              f"worst cell {worst[0]} off by {worst[1]:.1f}pp (tol 5pp)")

    def test_named_example_s4_prev25_n72(self, grid):
        got = _selection(grid, 4, 0.25, 72)
        check("criteria selection spot: S4 prev=25% N=72 near 83%",
              abs(got - 83) <= SELECTION_TOL, f"got {got:.1f}%")


class TestDoseSelectionSpots:
    def _subgroup(self, grid, scenario, prev, n, design, true_mtd):
        r = grid[(scenario, prev, n, design)]
        return next(s for s in r.subgroups if s.true_mtd == true_mtd)

    def test_appendix4_s1_n30_subgroup_mtd1(self, grid):
        s = self._subgroup(grid, 1, 0.5, 30, "pcrm", 1)
        ok = abs(s.pcs - 0.64) <= PCS_TOL and abs(s.wps - 0.87) <= WPS_TOL
        check("dose selection: S1 N=30 subgroup MTD-1 PCS 0.64 / WPS 0.87", ok,
              f"PCS {s.pcs:.3f}, WPS {s.wps:.3f}")

    def test_appendix4_s4_n72_subgroup_mtd6(self, grid):
        s = self._subgroup(grid, 4, 0.5, 72, "pcrm", 6)
        ok = abs(s.pcs - 0.78) <= PCS_TOL and abs(s.wps - 0.84) <= WPS_TOL
        check("dose selection: S4 N=72 subgroup MTD-6 PCS 0.78 / WPS 0.84", ok,
              f"PCS {s.pcs:.3f}, WPS {s.wps:.3f}")

    def test_appendix4_s5_n45(self, grid):
        s = self._subgroup(grid, 5, 0.5, 45, "pcrm", 2)
        ok = abs(s.pcs - 0.63) <= PCS_TOL and abs(s.wps - 0.85) <= WPS_TOL
        check("dose selection: S5 N=45 PCS 0.63 / WPS 0.85", ok,
              f"PCS {s.pcs:.3f}, WPS {s.wps:.3f}")

    def test_appendix4_s5_n45_distribution_row(self, grid):
        s = self._subgroup(grid, 5, 0.5, 45, "pcrm", 2)
        want = (0.17, 0.63, 0.17, 0.02, 0.0, 0.0)
        worst = max(abs(g - w) for g, w in zip(s.distribution, want))
        check("dose selection: S5 N=45 full distribution row", worst <= PCS_TOL,
              f"got {tuple(round(p, 2) for p in s.distribution)}, worst cell off {worst:.3f}")

    def test_appendix5_one_sample_s5_n72(self, grid):
        s = self._subgroup(grid, 5, 0.5, 72, "one-sample", 2)
        ok = abs(s.pcs - 0.92) <= 0.04
        check("one-sample comparator: S5 N=72 PCS 0.92 (tol 4pp)", ok, f"PCS {s.pcs:.3f}")

    def test_appendix5_one_sample_s4_n72_misdoses_subgroup(self, grid):
        s = self._subgroup(grid, 4, 0.5, 72, "one-sample", 6)
        ok = s.pcs <= 0.03 and abs(s.wps - 0.18) <= WPS_TOL
        check("one-sample comparator: S4 N=72 subgroup MTD-6 PCS <= 0.03, WPS 0.18", ok,
              f"PCS {s.pcs:.3f}, WPS {s.wps:.3f}")
