"""TOML run-configuration parsing with field-naming diagnostics."""

from __future__ import annotations

import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import CovariateSpec, DesignConfig, TrialError
from .estimation import CrmPrior
from .simulate import SimConfig


class ConfigError(ValueError):
    """Configuration file problem, annotated with the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


def _get(table: dict, key: str, kind, field: str, default=None, required=False):
    if key not in table:
        if required:
            raise ConfigError(field, "missing required field")
        return default
    value = table[key]
    try:
        if kind is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        if kind is int and isinstance(value, int) and not isinstance(value, bool):
            return int(value)
        if kind is bool and isinstance(value, bool):
            return value
        if kind is str and isinstance(value, str):
            return value
        if kind is list and isinstance(value, list):
            return value
    except (TypeError, ValueError):
        pass
    raise ConfigError(field, f"expected {kind.__name__}, got {type(value).__name__}")


def parse_design(table: dict, prefix: str = "design") -> DesignConfig:
    covariates = table.get("covariates", 3)
    if isinstance(covariates, int):
        spec = CovariateSpec.of(covariates)
    elif isinstance(covariates, list) and all(isinstance(c, str) for c in covariates):
        spec = CovariateSpec.of(covariates)
    else:
        raise ConfigError(f"{prefix}.covariates", "expected a count or a list of names")

    prior_tbl = table.get("prior", {})
    prior = CrmPrior(
        mean=_get(prior_tbl, "mean", float, f"{prefix}.prior.mean", 0.0),
        variance=_get(prior_tbl, "variance", float, f"{prefix}.prior.variance", 1.34),
        intercept=_get(prior_tbl, "intercept", float, f"{prefix}.prior.intercept", 3.0),
    )

    skeleton = table.get("skeleton")
    calibration = table.get("calibration")
    if skeleton is None and calibration is None:
        raise ConfigError(
            f"{prefix}.skeleton",
            "missing: provide either design.skeleton = [...] or a [design.calibration] block with nu and delta",
        )
    if skeleton is not None and calibration is not None:
        raise ConfigError(f"{prefix}.skeleton", "give either an explicit skeleton or a calibration, not both")
    nu = delta = None
    if calibration is not None:
        nu = _get(calibration, "nu", int, f"{prefix}.calibration.nu", required=True)
        delta = _get(calibration, "delta", float, f"{prefix}.calibration.delta", 0.08)

    try:
        return DesignConfig(
            doses=_get(table, "doses", int, f"{prefix}.doses", 6),
            covariates=spec,
            target=_get(table, "target", float, f"{prefix}.target", 0.25),
            stage_one=_get(table, "stage_one", int, f"{prefix}.stage_one", 15),
            n_max=_get(table, "n_max", int, f"{prefix}.n_max", 30),
            cohort_size=_get(table, "cohort", int, f"{prefix}.cohort", 3),
            start_dose=_get(table, "start_dose", int, f"{prefix}.start_dose", 2),
            alpha=_get(table, "alpha", float, f"{prefix}.alpha", 0.20),
            prior=prior,
            skeleton=tuple(float(p) for p in skeleton) if skeleton is not None else None,
            calibration_nu=nu,
            calibration_delta=delta,
            no_skip=_get(table, "no_skip", bool, f"{prefix}.no_skip", True),
            no_skip_per_pattern=_get(table, "no_skip_per_pattern", bool, f"{prefix}.no_skip_per_pattern", False),
            pvalue_method=_get(table, "pvalue_method", str, f"{prefix}.pvalue_method", "wald"),
            adjusted_candidate_model=_get(
                table, "adjusted_candidate_model", bool, f"{prefix}.adjusted_candidate_model", False
            ),
            conservative_inclusion_indexing=_get(
                table, "conservative_inclusion_indexing", bool, f"{prefix}.conservative_inclusion_indexing", False
            ),
            posterior_prob_method=_get(
                table, "posterior_prob_method", str, f"{prefix}.posterior_prob_method", "plugin"
            ),
        )
    except TrialError as exc:
        raise ConfigError(prefix, str(exc)) from exc


def parse_sim_config(data: dict) -> SimConfig:
    if "design" not in data:
        raise ConfigError("design", "missing required table")
    design = parse_design(data["design"])

    sim = data.get("simulation", {})
    scenarios = _get(sim, "scenarios", list, "simulation.scenarios", [1, 2, 3, 4, 5])
    if not all(isinstance(s, int) for s in scenarios):
        raise ConfigError("simulation.scenarios", "expected a list of scenario ids")

    raw_prev = _get(sim, "prevalences", list, "simulation.prevalences", [0.5])
    prevalences = []
    for i, entry in enumerate(raw_prev):
        if isinstance(entry, (int, float)) and not isinstance(entry, bool):
            prevalences.append((float(entry),) * design.num_covariates)
        elif isinstance(entry, list):
            prevalences.append(tuple(float(p) for p in entry))
        else:
            raise ConfigError(f"simulation.prevalences[{i}]", "expected a number or a list of numbers")

    n_max = _get(sim, "n_max", list, "simulation.n_max", [design.n_max])
    if not all(isinstance(n, int) for n in n_max):
        raise ConfigError("simulation.n_max", "expected a list of integers")

    try:
        return SimConfig(
            design=design,
            scenarios=tuple(scenarios),
            prevalences=tuple(prevalences),
            n_max_grid=tuple(n_max),
            replicates=_get(sim, "replicates", int, "simulation.replicates", 2000),
            comparator=_get(sim, "designs", str, "simulation.designs", "both"),
            master_seed=_get(sim, "seed", int, "simulation.seed", 20240607),
            threads=_get(sim, "threads", int, "simulation.threads", 1),
            distribution_mode=_get(sim, "distribution_mode", str, "simulation.distribution_mode", "patient"),
        )
    except (TrialError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError("simulation", str(exc)) from exc


def load_sim_config(path: Path) -> SimConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(str(path), f"TOML parse error: {exc}") from exc
    return parse_sim_config(data)
