"""Report writers: delimited output, JSON with Monte Carlo errors, text
tables mirroring the criteria-selection and dose-selection layouts, and
matplotlib figures for the PCS/WPS trends."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

from .metrics import SELECTION_CATEGORIES, MetricsReport

DOSE_CSV_FIELDS = [
    "scenario",
    "prevalence",
    "n_max",
    "design",
    "subgroup",
    "subgroup_label",
    "true_mtd",
    "dose",
    "selection_prob",
    "pcs",
    "wps",
    "n_pooled",
    "replicates",
    "failed",
]


def _prev_str(prevalence) -> str:
    vals = sorted(set(prevalence))
    if len(vals) == 1:
        return f"{vals[0]:g}"
    return "/".join(f"{p:g}" for p in prevalence)


def write_dose_csv(reports: list[MetricsReport], path: Path) -> None:
    """One row per scenario x prevalence x N_max x design x subgroup x dose."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=DOSE_CSV_FIELDS)
        writer.writeheader()
        for report in reports:
            for sub in report.subgroups:
                for dose, prob in enumerate(sub.distribution, start=1):
                    writer.writerow(
                        {
                            "scenario": report.scenario_id,
                            "prevalence": _prev_str(report.prevalence),
                            "n_max": report.n_max,
                            "design": report.design,
                            "subgroup": sub.index,
                            "subgroup_label": sub.label,
                            "true_mtd": sub.true_mtd,
                            "dose": dose,
                            "selection_prob": f"{prob:.6f}",
                            "pcs": f"{sub.pcs:.6f}",
                            "wps": f"{sub.wps:.6f}",
                            "n_pooled": sub.n_pooled,
                            "replicates": report.replicates,
                            "failed": report.failed,
                        }
                    )


def write_selection_csv(reports: list[MetricsReport], path: Path) -> None:
    fields = ["scenario", "prevalence", "n_max", "design", *SELECTION_CATEGORIES, "failed"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for report in reports:
            row = {
                "scenario": report.scenario_id,
                "prevalence": _prev_str(report.prevalence),
                "n_max": report.n_max,
                "design": report.design,
                "failed": report.failed,
            }
            row.update({c: f"{report.selection_pct[c]:.2f}" for c in SELECTION_CATEGORIES})
            writer.writerow(row)


def write_summary_json(reports: list[MetricsReport], path: Path, meta: dict | None = None) -> None:
    payload = {"meta": meta or {}, "reports": [r.to_dict() for r in reports]}
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def format_selection_table(reports: list[MetricsReport]) -> str:
    """Criteria-selection percentages in the familiar one-block-per-prevalence layout."""
    rows = [r for r in reports if r.design == "pcrm"]
    if not rows:
        return ""
    lines = []
    by_key = defaultdict(list)
    for r in rows:
        by_key[(_prev_str(r.prevalence), r.n_max)].append(r)
    for (prev, n_max), cell_reports in sorted(by_key.items()):
        lines.append(f"Criteria selection (%)  prevalence={prev}  N_max={n_max}")
        lines.append(f"{'scenario':>8} {'none':>6} {'correct':>8} {'correct+':>9} {'incorrect':>10}")
        for r in sorted(cell_reports, key=lambda r: r.scenario_id):
            pct = r.selection_pct
            lines.append(
                f"{r.scenario_id:>8} {pct['none']:>6.0f} {pct['correct_only']:>8.0f} "
                f"{pct['correct_with_others']:>9.0f} {pct['incorrect']:>10.0f}"
            )
        lines.append("")
    return "\n".join(lines)


def format_dose_table(reports: list[MetricsReport]) -> str:
    """Per-subgroup dose-selection distribution with PCS and WPS."""
    lines = []
    for r in sorted(reports, key=lambda r: (r.design, _prev_str(r.prevalence), r.scenario_id, r.n_max)):
        for sub in r.subgroups:
            dist = " ".join(f"{p:5.2f}" for p in sub.distribution)
            lines.append(
                f"{r.design:>10}  S{r.scenario_id} prev={_prev_str(r.prevalence):>9} N={r.n_max:<3} "
                f"{sub.label:>6} (MTD {sub.true_mtd}): {dist}  PCS={sub.pcs:.2f} WPS={sub.wps:.2f}"
            )
    return "\n".join(lines)


def format_summary(reports: list[MetricsReport]) -> str:
    parts = [format_selection_table(reports), "Dose selection by subgroup", format_dose_table(reports)]
    return "\n".join(p for p in parts if p)


def write_report_files(reports: list[MetricsReport], outdir: Path, meta: dict | None = None) -> dict[str, Path]:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "dose_csv": outdir / "dose_selection.csv",
        "selection_csv": outdir / "criteria_selection.csv",
        "summary_json": outdir / "summary.json",
        "summary_txt": outdir / "summary.txt",
    }
    write_dose_csv(reports, paths["dose_csv"])
    write_selection_csv(reports, paths["selection_csv"])
    write_summary_json(reports, paths["summary_json"], meta=meta)
    paths["summary_txt"].write_text(format_summary(reports) + "\n")
    return paths


# --- report command over the delimited output ------------------------------

def read_dose_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(row) for row in csv.DictReader(fh)]


def render_figures(rows: list[dict], outdir: Path) -> list[Path]:
    """PCS and WPS against total sample size, one figure per scenario x prevalence.

    Lines are drawn per subgroup and design so the covariate-aware and
    one-sample arms sit side by side, mirroring the standard presentation.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    groups = defaultdict(dict)
    for row in rows:
        key = (row["scenario"], row["prevalence"])
        series = groups[key].setdefault(
            (row["design"], row["subgroup_label"], int(row["true_mtd"])), {}
        )
        series[int(row["n_max"])] = (float(row["pcs"]), float(row["wps"]))

    written = []
    for (scenario, prev), series_map in sorted(groups.items()):
        fig, (ax_pcs, ax_wps) = plt.subplots(1, 2, figsize=(9.5, 3.8), sharex=True)
        for (design, label, true_mtd), points in sorted(series_map.items()):
            ns = sorted(points)
            style = "-o" if design == "pcrm" else "--s"
            name = f"{design} {label} (MTD {true_mtd})"
            ax_pcs.plot(ns, [points[n][0] for n in ns], style, label=name)
            ax_wps.plot(ns, [points[n][1] for n in ns], style, label=name)
        ax_pcs.set_ylabel("PCS")
        ax_wps.set_ylabel("WPS")
        for ax in (ax_pcs, ax_wps):
            ax.set_xlabel("total sample size")
            ax.set_ylim(0.0, 1.0)
            ax.grid(True, alpha=0.3)
        ax_wps.legend(fontsize=7, loc="lower right")
        fig.suptitle(f"Scenario {scenario}, prevalence {prev}")
        fig.tight_layout()
        prev_tag = prev.replace("/", "-").replace(".", "")
        path = outdir / f"pcs_wps_scenario{scenario}_prev{prev_tag}.png"
        fig.savefig(path, dpi=130)
        plt.close(fig)
        written.append(path)
    return written


def rows_to_table(rows: list[dict]) -> str:
    header = f"{'design':>10} {'S':>2} {'prev':>9} {'N':>3} {'subgroup':>8} {'MTD':>3} {'dose':>4} {'prob':>6} {'PCS':>5} {'WPS':>5}"
    lines = [header]
    for row in rows:
        lines.append(
            f"{row['design']:>10} {row['scenario']:>2} {row['prevalence']:>9} {row['n_max']:>3} "
            f"{row['subgroup_label']:>8} {row['true_mtd']:>3} {row['dose']:>4} "
            f"{float(row['selection_prob']):>6.3f} {float(row['pcs']):>5.2f} {float(row['wps']):>5.2f}"
        )
    return "\n".join(lines)
