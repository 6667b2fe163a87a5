import csv
import json
import time
from pathlib import Path

import pytest

from pcrm.cli import main

SMOKE = """\
[design]
doses = 6
covariates = 3
n_max = 30

[design.calibration]
nu = 2
delta = 0.08

[simulation]
scenarios = [4, 5]
prevalences = [0.5]
n_max = [30]
replicates = 10
designs = "both"
seed = 7
"""


@pytest.fixture
def smoke_config(tmp_path):
    path = tmp_path / "smoke.toml"
    path.write_text(SMOKE)
    return path


class TestSkeletonCommand:
    def test_defaults(self, capsys):
        assert main(["skeleton", "--target", "0.25", "--doses", "6", "--nu", "2", "--delta", "0.08"]) == 0
        out = capsys.readouterr().out
        lines = [l for l in out.splitlines() if l and l[0].isspace() or l[:4].strip().isdigit()]
        assert len([l for l in out.splitlines() if l.strip() and l.split()[0].isdigit()]) == 6
        assert "0.250000" in out
        assert "-4.098612" in out

    def test_single_dose(self, capsys):
        assert main(["skeleton", "--doses", "1", "--nu", "1"]) == 0
        assert "0.250000" in capsys.readouterr().out

    def test_invalid_delta_fails(self, capsys):
        assert main(["skeleton", "--delta", "0.5"]) == 2
        assert "delta" in capsys.readouterr().err


class TestSimulateCommand:
    def test_smoke_run_under_five_seconds(self, smoke_config, tmp_path, capsys):
        out = tmp_path / "out"
        started = time.time()
        assert main(["simulate", "--config", str(smoke_config), "--out", str(out), "--threads", "1"]) == 0
        assert time.time() - started < 5.0
        for name in ("dose_selection.csv", "criteria_selection.csv", "summary.json", "summary.txt"):
            assert (out / name).exists()
        with open(out / "dose_selection.csv") as fh:
            rows = list(csv.DictReader(fh))
        # 2 scenarios x 2 designs, subgroups x 6 doses
        assert len(rows) == (2 + 1) * 6 * 2
        payload = json.loads((out / "summary.json").read_text())
        assert payload["meta"]["master_seed"] == 7
        assert len(payload["reports"]) == 4

    def test_seed_override_changes_meta(self, smoke_config, tmp_path):
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(smoke_config), "--out", str(out), "--seed", "123"]) == 0
        assert json.loads((out / "summary.json").read_text())["meta"]["master_seed"] == 123

    def test_missing_skeleton_and_calibration_named(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[design]\ndoses = 6\ncovariates = 3\nn_max = 30\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        err = capsys.readouterr().err
        assert "design.skeleton" in err

    def test_bad_toml_reports_parse_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text("[design\n")
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "parse error" in capsys.readouterr().err


class TestPaperDefaultsConfig:
    def test_shipped_grid_dimensions(self):
        from pcrm.config import load_sim_config

        config = load_sim_config(Path(__file__).parent.parent / "configs" / "paper_defaults.toml")
        assert config.scenarios == (1, 2, 3, 4, 5)
        assert len(config.prevalences) == 2
        assert config.n_max_grid == (30, 45, 60, 72)
        assert config.designs == ("pcrm", "one-sample")
        assert config.replicates == 2000
        # 5 scenarios x 2 prevalences x 4 sample sizes x 2 designs
        cells = len(config.scenarios) * len(config.prevalences) * len(config.n_max_grid) * len(config.designs)
        assert cells == 80


class TestReportCommand:
    @pytest.fixture
    def csv_path(self, smoke_config, tmp_path):
        out = tmp_path / "out"
        main(["simulate", "--config", str(smoke_config), "--out", str(out)])
        return out / "dose_selection.csv"

    def test_table_format(self, csv_path, capsys):
        assert main(["report", "--in", str(csv_path), "--format", "table", "--no-figures"]) == 0
        out = capsys.readouterr().out
        assert "PCS" in out and "one-sample" in out

    def test_json_format(self, csv_path, capsys):
        assert main(["report", "--in", str(csv_path), "--format", "json", "--no-figures"]) == 0
        rows = json.loads(capsys.readouterr().out)
        assert rows and {"scenario", "dose", "pcs", "wps"} <= set(rows[0])

    def test_csv_format(self, csv_path, capsys):
        assert main(["report", "--in", str(csv_path), "--format", "csv", "--no-figures"]) == 0
        assert capsys.readouterr().out.startswith("scenario,")

    def test_figures_rendered_alongside_output(self, csv_path, tmp_path):
        figs = tmp_path / "figs"
        assert main(["report", "--in", str(csv_path), "--format", "table", "--figures-dir", str(figs)]) == 0
        written = sorted(figs.glob("*.png"))
        assert len(written) == 2  # one per scenario x prevalence
        assert all(p.stat().st_size > 5000 for p in written)

    def test_missing_input(self, tmp_path, capsys):
        assert main(["report", "--in", str(tmp_path / "nope.csv")]) == 2
        assert "not found" in capsys.readouterr().err
