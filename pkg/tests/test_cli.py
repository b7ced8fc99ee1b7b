"""Tests for the command-line interface, local mode and server mode."""

import json

import httpx
import pytest
from fastapi.testclient import TestClient

from hopfolio.cli import main, write_atomic
from hopfolio.config import SynthSpec
from hopfolio.runner import METRICS_HEADER, synth_artifacts
from hopfolio.service.app import create_app

METRICS_TEXT = (METRICS_HEADER + "\n"
                + "EW,0,0.1,1.0,1.5,0.02\nEW,1,0.1,1.2,1.5,0.02\n"
                + "HRP,0,0.2,2.0,2.5,0.01\nHRP,1,0.2,2.3,2.5,0.01\n")


def _write_config(tmp_path, payload):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(payload))
    return str(path)


def _small_config(tmp_path, out_dir, **extra):
    return _write_config(tmp_path, {
        "data": {"synth": {"n_assets": 3, "n_days": 61}},
        "allocators": ["EW", "HRP"],
        "cpcv": {"n_groups": 4, "k_test": 2, "purge": 3, "embargo": 3},
        "batch": {"lookback": 8, "batch_size": 8},
        "out": str(out_dir),
    } | extra)


class TestSynthCommand:
    def test_writes_panel_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "panel.csv"
        assert main(["synth", "--out", str(out), "--n-assets", "3",
                     "--n-days", "12", "--seed", "4"]) == 0
        expect = synth_artifacts(SynthSpec(n_assets=3, n_days=12), 4,
                                 path_label=str(out))
        assert out.read_text() == expect["panel.csv"]
        manifest = json.loads((tmp_path / "panel.csv.manifest.json").read_text())
        assert manifest["path"] == str(out)
        assert f"wrote {out}" in capsys.readouterr().out

    def test_config_supplies_spec_and_seed(self, tmp_path):
        cfg = _write_config(tmp_path, {
            "data": {"synth": {"n_assets": 2, "n_days": 9}}, "seed": 7})
        out = tmp_path / "p.csv"
        assert main(["synth", "--out", str(out), "--config", cfg]) == 0
        expect = synth_artifacts(SynthSpec(n_assets=2, n_days=9), 7,
                                 path_label=str(out))
        assert out.read_text() == expect["panel.csv"]

    def test_config_without_synth_section(self, tmp_path, capsys):
        cfg = _write_config(tmp_path, {"data": {"csv": "x.csv"}})
        code = main(["synth", "--out", str(tmp_path / "p.csv"),
                     "--config", cfg])
        assert code == 1
        assert capsys.readouterr().err.startswith("synth:")

    def test_bad_hot_asset_is_config_error(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "p.csv"),
                     "--n-assets", "3", "--n-days", "10",
                     "--hot-asset", "7"]) == 1


class TestBacktestCommand:
    def test_writes_artifact_directory(self, tmp_path, capsys):
        out_dir = tmp_path / "results"
        cfg = _small_config(tmp_path, out_dir)
        assert main(["backtest", "--config", cfg]) == 0
        names = {p.name for p in out_dir.iterdir()}
        assert {"result_EW.json", "result_HRP.json", "metrics.csv",
                "report.md", "manifest.json"} <= names
        assert (out_dir / "metrics.csv").read_text().startswith(METRICS_HEADER)
        assert "artifacts" in capsys.readouterr().out

    def test_flag_overrides(self, tmp_path):
        out_dir = tmp_path / "a"
        other = tmp_path / "b"
        cfg = _small_config(tmp_path, out_dir)
        assert main(["backtest", "--config", cfg, "--out", str(other),
                     "--allocators", "EW"]) == 0
        assert not out_dir.exists()
        names = {p.name for p in other.iterdir()}
        assert "result_EW.json" in names
        assert "result_HRP.json" not in names

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["backtest", "--config", str(tmp_path / "no.json")]) == 1
        assert "backtest:" in capsys.readouterr().err

    def test_missing_csv_panel_is_data_error(self, tmp_path):
        cfg = _write_config(tmp_path, {
            "data": {"csv": str(tmp_path / "absent.csv")},
            "out": str(tmp_path / "r")})
        assert main(["backtest", "--config", cfg]) == 2

    def test_bad_allocator_override(self, tmp_path):
        cfg = _small_config(tmp_path, tmp_path / "r")
        assert main(["backtest", "--config", cfg,
                     "--allocators", "EW,BAD"]) == 1


class TestCompareCommand:
    def _results(self, tmp_path):
        rdir = tmp_path / "results"
        rdir.mkdir()
        (rdir / "metrics.csv").write_text(METRICS_TEXT)
        return rdir

    def test_writes_tukey_and_cld(self, tmp_path):
        rdir = self._results(tmp_path)
        assert main(["compare", "--results", str(rdir)]) == 0
        doc = json.loads((rdir / "tukey.json").read_text())
        assert doc["alpha"] == 0.05
        assert (rdir / "cld.md").read_text().startswith("| Method |")

    def test_separate_out_dir_and_alpha(self, tmp_path):
        rdir = self._results(tmp_path)
        out = tmp_path / "cmp"
        assert main(["compare", "--results", str(rdir), "--out", str(out),
                     "--alpha", "0.2"]) == 0
        assert json.loads((out / "tukey.json").read_text())["alpha"] == 0.2
        assert not (rdir / "tukey.json").exists()

    def test_missing_metrics_is_data_error(self, tmp_path, capsys):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["compare", "--results", str(empty)]) == 2
        assert "missing metrics.csv" in capsys.readouterr().err

    def test_single_method_is_config_error(self, tmp_path):
        rdir = tmp_path / "results"
        rdir.mkdir()
        (rdir / "metrics.csv").write_text(
            METRICS_HEADER + "\nEW,0,0.1,1.0,1.5,0.02\n")
        assert main(["compare", "--results", str(rdir)]) == 1

    def test_degenerate_groups_is_runtime_error(self, tmp_path):
        rdir = tmp_path / "results"
        rdir.mkdir()
        (rdir / "metrics.csv").write_text(
            METRICS_HEADER + "\nEW,0,0.1,1.0,1.5,0.02\nEW,1,0.1,1.0,1.5,0.02\n"
            + "HRP,0,0.2,2.0,2.5,0.01\nHRP,1,0.2,2.0,2.5,0.01\n")
        assert main(["compare", "--results", str(rdir)]) == 3


class TestReportCommand:
    def test_summary_without_tukey(self, tmp_path):
        rdir = tmp_path / "results"
        rdir.mkdir()
        (rdir / "metrics.csv").write_text(METRICS_TEXT)
        assert main(["report", "--results", str(rdir)]) == 0
        summary = (rdir / "summary.md").read_text()
        assert summary.startswith("# Backtest summary")
        assert "## Pairwise comparison" not in summary

    def test_summary_picks_up_tukey_json(self, tmp_path):
        rdir = tmp_path / "results"
        rdir.mkdir()
        (rdir / "metrics.csv").write_text(METRICS_TEXT)
        assert main(["compare", "--results", str(rdir)]) == 0
        assert main(["report", "--results", str(rdir)]) == 0
        assert "## Pairwise comparison" in (rdir / "summary.md").read_text()

    def test_missing_results_dir(self, tmp_path):
        assert main(["report", "--results", str(tmp_path / "none")]) == 2


class TestServerMode:
    @pytest.fixture
    def fake_http(self, monkeypatch):
        tc = TestClient(create_app())

        def fake_post(url, json=None, timeout=None):
            endpoint = url.rsplit("/", 1)[1]
            return tc.post(f"/{endpoint}", json=json)

        monkeypatch.setattr(httpx, "post", fake_post)

    def test_synth_round_trips_through_service(self, tmp_path, fake_http):
        out = tmp_path / "panel.csv"
        assert main(["synth", "--out", str(out), "--n-assets", "3",
                     "--n-days", "10", "--seed", "1",
                     "--server", "http://svc"]) == 0
        expect = synth_artifacts(SynthSpec(n_assets=3, n_days=10), 1,
                                 path_label=str(out))
        assert out.read_text() == expect["panel.csv"]

    def test_service_errors_map_to_exit_codes(self, tmp_path, fake_http, capsys):
        code = main(["synth", "--out", str(tmp_path / "p.csv"),
                     "--n-assets", "3", "--n-days", "10",
                     "--hot-asset", "9", "--server", "http://svc"])
        assert code == 1
        assert "synth:" in capsys.readouterr().err

    def test_compare_through_service(self, tmp_path, fake_http):
        rdir = tmp_path / "results"
        rdir.mkdir()
        (rdir / "metrics.csv").write_text(METRICS_TEXT)
        assert main(["compare", "--results", str(rdir),
                     "--server", "http://svc"]) == 0
        assert (rdir / "tukey.json").exists()


class TestWriteAtomic:
    def test_creates_parents_and_replaces(self, tmp_path):
        target = tmp_path / "deep" / "nested" / "file.txt"
        write_atomic(target, "one")
        assert target.read_text() == "one"
        write_atomic(target, "two")
        assert target.read_text() == "two"
        # no temp files left behind
        assert [p.name for p in target.parent.iterdir()] == ["file.txt"]
