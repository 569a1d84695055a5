from __future__ import annotations

import json
import math

import numpy as np
import pytest

from pilotwave import cli
from pilotwave.analysis import series_from_csv


def run(*argv) -> int:
    return cli.main(list(argv))


class TestPhasesCommand:
    def test_writes_valid_document(self, tmp_path):
        out = tmp_path / "ph.json"
        assert run("phases", "--seed", "1", "--modes-per-axis", "2", "--out", str(out)) == 0
        doc = json.loads(out.read_text())
        phases = np.asarray(doc["phases"])
        assert doc["modes_per_axis"] == 2 and doc["seed"] == 1
        assert phases.shape == (2, 2)
        assert np.all((phases >= 0.0) & (phases < 2 * math.pi))

    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run("phases", "--seed", "7", "--modes-per-axis", "3", "--out", str(a))
        run("phases", "--seed", "7", "--modes-per-axis", "3", "--out", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_different_seeds_differ(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        run("phases", "--seed", "1", "--modes-per-axis", "2", "--out", str(a))
        run("phases", "--seed", "2", "--modes-per-axis", "2", "--out", str(b))
        assert (json.loads(a.read_text())["phases"]
                != json.loads(b.read_text())["phases"])


class TestConfigHandling:
    def test_requires_exactly_one_phase_source(self, tmp_path):
        assert run("hbar", "--out-dir", str(tmp_path / "o")) == 2

    def test_corrupt_phase_file_fails_before_compute(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{broken")
        assert run("hbar", "--phase-file", str(bad), "--out-dir", str(tmp_path / "o")) == 2

    def test_missing_config_file(self, tmp_path):
        assert run("hbar", "--preset", "m4-paper", "--config",
                   str(tmp_path / "nope.json")) == 2

    def test_unknown_preset(self, tmp_path):
        with pytest.raises(SystemExit):  # argparse rejects bad choices
            run("hbar", "--preset", "m9-paper")

    def test_flags_override_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"preset": "m4-paper", "periods": 3,
                                   "points_per_cell": [4]}))
        out = tmp_path / "o"
        assert run("hbar", "--config", str(cfg), "--periods", "1",
                   "--out-dir", str(out)) == 0
        series = series_from_csv(out / "series.csv")
        assert series.periods.tolist() == [0.0, 1.0]
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["config"]["periods"] == 1
        assert meta["config"]["preset"] == "m4-paper"
        assert meta["version"].startswith("pilotwave-")


class TestHBarCommand:
    def test_tiny_run_outputs(self, tmp_path):
        out = tmp_path / "run"
        assert run("hbar", "--preset", "m4-paper", "--periods", "1",
                   "--points-per-cell", "4,5", "--out-dir", str(out)) == 0
        series = series_from_csv(out / "series.csv")
        assert series.grids == (4, 5)
        assert len(series) == 2
        assert all(e.accuracy_min >= 0.95 for e in series.entries)
        log_lines = (out / "log_series.csv").read_text().splitlines()
        assert log_lines[0] == "time,ln_mean,ln_min,ln_max"
        assert len(log_lines) == 3
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["fit"] is None  # too few entries to fit
        assert meta["status"] == "completed"

    def test_equilibrium_start_is_null(self, tmp_path):
        out = tmp_path / "eq"
        assert run("hbar", "--preset", "m4-paper", "--periods", "1",
                   "--points-per-cell", "5", "--equilibrium-start",
                   "--out-dir", str(out)) == 0
        series = series_from_csv(out / "series.csv")
        assert np.abs(series.means).max() <= 0.01

    def test_resume_reproduces_csv_byte_identical(self, tmp_path):
        out = tmp_path / "run"
        args = ("hbar", "--preset", "m4-paper", "--periods", "2",
                "--points-per-cell", "5", "--out-dir", str(out))
        assert run(*args) == 0
        first = (out / "series.csv").read_bytes()
        checkpoints = sorted(p.name for p in (out / "checkpoints").glob("*.txt"))
        assert len(checkpoints) == 3
        (out / "series.csv").unlink()
        assert run(*args, "--resume") == 0
        assert (out / "series.csv").read_bytes() == first

    def test_without_resume_checkpoints_are_cleared(self, tmp_path):
        out = tmp_path / "run"
        args = ("hbar", "--preset", "m4-paper", "--periods", "0.5",
                "--points-per-cell", "4", "--out-dir", str(out))
        assert run(*args) == 0
        marker = out / "checkpoints" / "stale.txt"
        marker.write_text("stale")
        assert run(*args) == 0
        assert not marker.exists()

    def test_aborted_run_exits_nonzero_with_partial_outputs(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "integrator": {"max_steps_total": 8, "sub_intervals": 2,
                           "max_steps_per_sub_interval": 4}}))
        out = tmp_path / "run"
        assert run("hbar", "--preset", "m4-paper", "--periods", "1",
                   "--points-per-cell", "4", "--config", str(cfg),
                   "--out-dir", str(out)) == 1
        series = series_from_csv(out / "series.csv")  # prefix retained
        assert series.periods.tolist() == [0.0]
        meta = json.loads((out / "metadata.json").read_text())
        assert meta["status"] == "aborted"


class TestDensityCommand:
    def test_snapshots_and_heatmaps(self, tmp_path):
        out = tmp_path / "den"
        assert run("density", "--preset", "m4-paper", "--times", "0", "--points-per-cell",
                   "5", "--out-dir", str(out)) == 0
        assert (out / "field_p0.txt").exists()
        pgm = (out / "smooth_rho_p0.pgm").read_bytes()
        assert pgm.startswith(b"P5\n76 76\n255\n")
        assert len(pgm) == len(b"P5\n76 76\n255\n") + 76 * 76
        meta = json.loads((out / "metadata.json").read_text())
        rec = meta["outputs"]["period_0"]
        assert rec["pgm_rho"]["value_at_255"] > 0

    def test_rho_qt_snapshots_are_period_invariant(self, tmp_path):
        out = tmp_path / "den"
        assert run("density", "--preset", "m4-paper", "--times", "0", "1",
                   "--points-per-cell", "5", "--out-dir", str(out)) == 0
        a = (out / "smooth_rho_qt_p0.pgm").read_bytes()
        b = (out / "smooth_rho_qt_p1.pgm").read_bytes()
        assert a == b


class TestConfineCommand:
    def test_outputs_and_metadata(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({
            "confine": {"points": [[1.5, 1.5], [0.5, 0.0]], "periods": 0.2,
                        "square_side": 0.2, "square_points_per_axis": 4,
                        "stride_periods": 0.02}}))
        out = tmp_path / "conf"
        assert run("confine", "--preset", "m4-paper", "--config", str(cfg),
                   "--out-dir", str(out)) == 0
        lines = (out / "traces.csv").read_text().splitlines()
        assert lines[0] == "id,time,q1,q2,status"
        assert len(lines) == 1 + 2 * 11  # two traces, 11 samples each
        squares = (out / "squares.csv").read_text().splitlines()
        assert len(squares) == 1 + 2 * 16
        meta = json.loads((out / "metadata.json").read_text())
        summary = meta["confinement"]
        assert 0.0 < summary["coverage"] <= 1.0
        assert summary["grade"] in ("negligible", "mild", "strong")
        assert len(summary["squares"]) == 2


class TestFitCommand:
    def test_refit_from_csv(self, tmp_path, capsys):
        from pilotwave.analysis import HBarEntry, HBarSeries, series_to_csv
        entries = []
        for k in range(12):
            v = 0.5 * math.exp(-0.3 * k) + 0.07
            entries.append(HBarEntry(k * 2 * math.pi, float(k), (v, v, v), v, v, v))
        path = tmp_path / "series.csv"
        series_to_csv(path, HBarSeries(entries, grids=(29, 30, 31)))
        out = tmp_path / "fit.json"
        assert run("fit", "--csv", str(path), "--out", str(out)) == 0
        doc = json.loads(out.read_text())
        assert doc["b"] == pytest.approx(0.3, abs=1e-6)
        assert doc["c"] == pytest.approx(0.07, abs=1e-6)


class TestCheckCommand:
    @pytest.mark.slow
    def test_fresh_build_defaults_pass(self, tmp_path, capsys):
        # full self-validation at the default reduced-grid settings
        assert run("check", "--preset", "m4-paper", "--out-dir", str(tmp_path)) == 0
        lines = capsys.readouterr().out.splitlines()
        assert any(line.startswith("PASS equilibrium_null") for line in lines)
        assert not any(line.startswith("FAIL") for line in lines)
        meta = json.loads((tmp_path / "metadata.json").read_text())
        assert all(c["passed"] for c in meta["checks"])
