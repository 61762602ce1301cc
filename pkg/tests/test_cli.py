"""Command-line interface: exit codes, artifacts and manifest re-runs."""

import json
import subprocess
import sys

import pandas as pd
import pytest

from conftest import DOCS, GALLERY, load
from deathsys.cli import main

DEMENTIA = DOCS / "dementia"


def write(path, doc):
    path.write_text(json.dumps(doc))
    return path


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    """simulate -> observe -> fit on a small dementia population."""
    tmp = tmp_path_factory.mktemp("chain")
    sim = write(tmp / "simulate.json", {**load(DEMENTIA / "simulate.json"), "system": load(DEMENTIA / "system.json"),
                                        "simulation": {"n": 300, "step": 0.01, "horizon": 8.0}})
    assert run("simulate", "--config", sim, "--out", tmp / "pop", "--workers", 1, "--emit-plot-data") == 0
    assert run("observe", "--config", DEMENTIA / "observation.json", "--input", tmp / "pop",
               "--out", tmp / "data") == 0
    assert run("fit", "--config", DEMENTIA / "fit.json", "--input", tmp / "data", "--out", tmp / "fit",
               "--workers", 1) == 0
    return tmp


def test_validate_writes_graph(tmp_path):
    assert run("validate", "--config", DEMENTIA / "system.json", "--out", tmp_path) == 0
    dot = (tmp_path / "graph.dot").read_text()
    assert '"Y" -> "death"' in dot and "digraph" in dot
    man = json.loads((tmp_path / "run_manifest.json").read_text())["run_manifest"]
    assert man["command"] == "validate" and man["exit_code"] == 0 and len(man["config_hash"]) > 0


def test_invalid_system_exits_one(tmp_path, capsys):
    doc = load(DEMENTIA / "system.json")
    doc["processes"]["Y"]["hazard"]["terms"]["death"] = 0.5
    assert run("validate", "--config", write(tmp_path / "bad.json", doc), "--out", tmp_path / "o") == 1
    assert "DeathHasOutgoingEdge" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["bogus", "--config", "x.json", "--out", "o"],
    ["fit", "--config", "x.json"],
    ["simulate", "--out", "o"],
])
def test_usage_errors_exit_two(argv):
    assert main(argv) == 2


def test_missing_input_is_usage_error(tmp_path):
    assert run("fit", "--config", DEMENTIA / "fit.json", "--out", tmp_path) == 2


def test_missing_config_file_exits_one(tmp_path):
    assert run("validate", "--config", tmp_path / "none.json", "--out", tmp_path / "o") == 1


def test_console_script_exit_code(tmp_path):
    res = subprocess.run([sys.executable, "-m", "deathsys.cli", "nope"], capture_output=True)
    assert res.returncode == 2
    res = subprocess.run([sys.executable, "-m", "deathsys.cli", "graph", "--config", str(DEMENTIA / "system.json"),
                          "--out", str(tmp_path)], capture_output=True)
    assert res.returncode == 0 and (tmp_path / "edges.csv").exists()


def test_chain_artifacts(chain):
    assert {"paths.csv", "events.csv", "subjects.csv", "plot_paths.csv"} <= {p.name for p in (chain / "pop").iterdir()}
    assert {"longitudinal.csv", "events.csv", "attributes.csv", "factor.csv"} <= \
        {p.name for p in (chain / "data").iterdir()}
    res = json.loads((chain / "fit" / "fit.json").read_text())
    assert res["converged"] and set(res["estimates"]) >= {"beta1", "beta2", "gamma3"}
    man = json.loads((chain / "fit" / "run_manifest.json").read_text())["run_manifest"]
    # path references are inlined into the manifest
    assert isinstance(man["config"]["model"], dict) and man["input"].endswith("data")


@pytest.mark.parametrize("step, files", [("pop", ["paths.csv", "events.csv", "subjects.csv"]),
                                         ("data", ["longitudinal.csv", "events.csv"]),
                                         ("fit", ["fit.json"])])
def test_manifest_rerun_is_bitwise_identical(chain, tmp_path, step, files):
    command = {"pop": "simulate", "data": "observe", "fit": "fit"}[step]
    assert run(command, "--config", chain / step / "run_manifest.json", "--out", tmp_path, "--workers", 1) == 0
    for f in files:
        assert (tmp_path / f).read_bytes() == (chain / step / f).read_bytes(), f


def test_manifest_for_other_command_is_usage_error(chain, tmp_path):
    assert run("simulate", "--config", chain / "fit" / "run_manifest.json", "--out", tmp_path) == 2


def test_classify_preferable_contrast(tmp_path):
    assert run("classify-car", "--config", DEMENTIA / "classify.json", "--out", tmp_path / "c") == 0
    car = pd.read_csv(tmp_path / "c" / "car.csv")
    assert car.loc[0, "status"] == "fails"
    pref = {**load(DEMENTIA / "preferable.json"), "system": load(GALLERY / "systems" / "bp_cognition.json"),
            "n_mc": 2000, "t_grid": [2, 4]}
    assert run("preferable", "--config", write(tmp_path / "p.json", pref), "--out", tmp_path / "p",
               "--emit-plot-data") == 0
    assert json.loads((tmp_path / "p" / "preferable.json").read_text())["verdict"] == "v1_preferable"
    assert (tmp_path / "p" / "plot_preferable.csv").exists()
    con = {**load(DEMENTIA / "contrast.json"), "system": load(DEMENTIA / "system.json"), "kind": "hazard_ratio"}
    assert run("contrast", "--config", write(tmp_path / "k.json", con), "--out", tmp_path / "k") == 0
    assert len(pd.read_csv(tmp_path / "k" / "contrast.csv")) == 3


def test_study_reports_identical_across_workers(tmp_path):
    doc = load(GALLERY / "direct.json")
    doc.update(system=load(GALLERY / "systems" / "quant_direct.json"),
               observation=load(GALLERY / "schemes" / "annual_z.json"),
               replications=3, simulation={"n": 120, "step": 0.01, "horizon": 5.0})
    cfg = write(tmp_path / "study.json", doc)
    assert run("study", "--config", cfg, "--out", tmp_path / "w1", "--workers", 1) == 0
    assert run("study", "--config", cfg, "--out", tmp_path / "w2", "--workers", 2) == 0
    assert (tmp_path / "w1" / "report.csv").read_bytes() == (tmp_path / "w2" / "report.csv").read_bytes()
    assert "scenario direct" in (tmp_path / "w1" / "summary.txt").read_text()
