from __future__ import annotations

import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from firmpanel import cli
from firmpanel.synth import CorpusPlan, generate


def tree_bytes(*roots: Path) -> dict:
    out = {}
    for root in roots:
        for p in sorted(root.rglob("*")):
            if p.is_file():
                out[f"{root.name}/{p.relative_to(root).as_posix()}"] = p.read_bytes()
    return out


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    return generate(CorpusPlan(n_firms=150, seed=3), tmp_path_factory.mktemp("cli"))


def run(corpus, tmp: Path, *args: str) -> int:
    return cli.main(["-c", str(corpus.config), "--work-dir", str(tmp / "work"),
                     "--output-dir", str(tmp / "output"), *args])


@pytest.fixture(scope="module")
def full_run(corpus, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("full")
    assert run(corpus, tmp, "run-all") == 0
    return tmp


def test_run_all_writes_panel_and_reports(full_run):
    panel = sorted(p.name for p in (full_run / "output" / "panel").iterdir())
    assert panel == [f"panel_{y}.parquet" for y in range(2011, 2024)]
    reports = {p.name for p in (full_run / "output" / "reports").iterdir()}
    assert {"filing_rates.csv", "filing_rates_by_region.csv", "articulation.csv", "aggregate_ratios.csv",
            "geocoding_quality.csv", "grid_2020.csv"} <= reports
    assert (full_run / "work" / "diagnostics_ingest.csv").exists()


def test_stages_one_by_one_match_run_all(corpus, full_run, tmp_path):
    for stage in cli.STAGES:
        assert run(corpus, tmp_path, stage.name) == 0
    assert tree_bytes(tmp_path / "work", tmp_path / "output") == \
        tree_bytes(full_run / "work", full_run / "output")


def test_workers_do_not_change_outputs(corpus, full_run, tmp_path):
    assert run(corpus, tmp_path, "run-all", "--workers", "3") == 0
    assert tree_bytes(tmp_path / "work", tmp_path / "output") == \
        tree_bytes(full_run / "work", full_run / "output")


def test_rerun_is_idempotent(corpus, full_run, tmp_path):
    shutil.copytree(full_run / "work", tmp_path / "work")
    shutil.copytree(full_run / "output", tmp_path / "output")
    assert run(corpus, tmp_path, "articulate") == 0
    assert run(corpus, tmp_path, "report") == 0
    assert tree_bytes(tmp_path / "work", tmp_path / "output") == \
        tree_bytes(full_run / "work", full_run / "output")


def test_missing_exemption_file_is_config_invalid(corpus, full_run, tmp_path, capsys):
    shutil.copytree(full_run / "work", tmp_path / "work")
    code = run(corpus, tmp_path, "classify", "--set", "exemptions=")
    assert code == cli.EXIT_CONFIG_INVALID
    assert "CONFIG_INVALID" in capsys.readouterr().err


def test_no_statement_files_is_missing_input(corpus, tmp_path):
    assert run(corpus, tmp_path, "ingest", "--set", f"fns={tmp_path}/none*.xml",
               "--set", f"rosstat={tmp_path}/none*.csv") == cli.EXIT_MISSING_INPUT


def test_stage_before_its_inputs_is_missing_input(corpus, tmp_path):
    assert run(corpus, tmp_path, "impute") == cli.EXIT_MISSING_INPUT


def test_geocode_without_service_is_config_invalid(corpus, full_run, tmp_path):
    shutil.copytree(full_run / "work", tmp_path / "work")
    assert run(corpus, tmp_path, "geocode", "--set", "gazetteer=") == cli.EXIT_CONFIG_INVALID


@pytest.mark.parametrize("args", [["--set", "nonsense=1"], ["--span", "2009-2020"], ["--workers", "0"],
                                  ["--set", "materials_line=1234"], ["--set", "novalue"]])
def test_bad_configuration(corpus, tmp_path, args):
    assert run(corpus, tmp_path, "ingest", *args) == cli.EXIT_CONFIG_INVALID


def test_dry_run_prints_plan(corpus, tmp_path, capsys):
    assert run(corpus, tmp_path, "run-all", "--dry-run") == 0
    out = capsys.readouterr().out
    assert [line.split(".")[0] for line in out.splitlines()[1:]] == [str(i) for i in range(1, 10)]
    assert not (tmp_path / "work").exists()


def test_config_paths_resolve_against_config_dir(corpus):
    cfg = cli.load_config(corpus.config)
    assert cfg.exemptions == corpus.root / "exemptions.csv"
    assert cfg.span == (2011, 2023)


def test_geocoder_url_from_environment(monkeypatch):
    monkeypatch.setenv(cli.GEOCODER_ENV, "http://geo.local")
    assert cli.load_config().geocoder_url == "http://geo.local"


def test_console_entry_point(corpus, tmp_path):
    proc = subprocess.run([sys.executable, "-m", "firmpanel.cli", "-c", str(corpus.config), "build-universe",
                           "--work-dir", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "universe.csv").exists()
