import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from lpsv.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main
from lpsv.config import load_scenario, parse_scenario
from lpsv.model import ValidationError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

SMALL = {
    "name": "small",
    "seed": 3,
    "time": {"horizon": 0.1, "dt": 0.005},
    "mixture": [
        {"weight": 0.5, "model": {"k": 1.0, "theta": 0.2, "xi": 0.4, "r": 0.05,
                                  "rho1": 0.3, "rho2": 0.2, "rho3": 0.5}},
        {"weight": 0.5, "model": {"k": 2.0, "theta": 0.3, "xi": 0.3, "r": 0.02,
                                  "rho1": 0.1, "rho2": 0.4, "rho3": 0.5}},
    ],
    "vol": {"q": "constant", "h": "clamped_abs", "h_params": {"h_min": 0.1, "h_max": 0.6}},
    "initial": {"x_kind": "rayleigh", "x_scale": 0.7, "y_mean": 0.2, "y_sd": 0.1},
    "particles": {"n": 500, "record_every": 5, "hist_x": [0.0, 3.0, 6],
                  "hist_y": [-1.0, 1.0, 4]},
    "solver": {"dx": 0.1, "dy": 0.2, "X_max": 3.0, "y_min": -1.6, "y_max": 2.0},
    "tasks": ["compare"],
}


def write(tmp_path, data, name="c.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return p


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def artifacts(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.json"}


@pytest.mark.parametrize("name", ["minimal.yaml", "ou_compare.yaml", "full.yaml"])
def test_shipped_configs_validate(name, capsys):
    code, out, _ = run(["validate", CONFIGS / name], capsys)
    assert code == EXIT_OK
    assert json.loads(out)["valid"] is True


def test_task_dependencies_are_expanded():
    sc = parse_scenario(dict(SMALL))
    assert sc.tasks == ("simulate", "solve", "compare")


@pytest.mark.parametrize("mutate, invariant", [
    (lambda d: d.update(bogus=1), "no unknown keys"),
    (lambda d: d["solver"].update(dz=0.1), "no unknown keys"),
    (lambda d: d.pop("seed"), "seed present for stochastic tasks"),
    (lambda d: d["time"].update(dt=0.003), "time.horizon is a multiple of time.dt"),
    (lambda d: d["mixture"][0].update(weight=0.6), "weights sum to 1 ± 1e−12"),
    (lambda d: d.update(tasks=["fly"]), "task known"),
    (lambda d: d["mixture"][1]["model"].update(rho=0.9), "correlation condition"),
    (lambda d: d["mixture"][1]["model"].update(rho1=1.5), "rho1 ∈ (−1,1)"),
    (lambda d: d.update(smooth_study={"epsilons": [0.1, 0.2]}),
     "smooth_study.epsilons strictly decreasing"),
])
def test_invalid_configs(mutate, invariant, tmp_path, capsys):
    data = json.loads(json.dumps(SMALL))
    mutate(data)
    with pytest.raises(ValidationError) as info:
        parse_scenario(data)
    assert info.value.invariant == invariant
    code, _, err = run(["validate", write(tmp_path, data)], capsys)
    assert code == EXIT_VALIDATION
    payload = json.loads(err)
    assert payload["error"] == "validation" and payload["invariant"] == invariant


def test_missing_file_and_bad_yaml(tmp_path, capsys):
    assert run(["validate", tmp_path / "nope.yaml"], capsys)[0] == EXIT_VALIDATION
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1, 2\n")
    assert run(["validate", bad], capsys)[0] == EXIT_VALIDATION
    bad.write_text("- 1\n- 2\n")
    assert run(["validate", bad], capsys)[0] == EXIT_VALIDATION


def test_cfl_violation_is_a_validation_error(tmp_path, capsys):
    data = json.loads(json.dumps(SMALL))
    data["time"] = {"horizon": 0.1, "dt": 0.05}
    data["solver"]["dx"] = 0.01
    code, _, err = run(["validate", write(tmp_path, data)], capsys)
    assert code == EXIT_VALIDATION
    assert "CFL" in json.loads(err)["message"]


def test_run_minimal_writes_manifest(tmp_path, capsys):
    out = tmp_path / "out"
    code, stdout, _ = run(["run", CONFIGS / "minimal.yaml", "--out", out], capsys)
    assert code == EXIT_OK
    assert json.loads(stdout)["out"] == str(out)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["seed_override"] is None
    assert {f["name"] for f in manifest["files"]} == {"loss.csv", "snapshots.csv"}
    lines = (out / "loss.csv").read_text().splitlines()
    assert lines[0] == "t,loss"
    assert len(lines) == 1 + 1000 + 1


def test_run_is_deterministic_across_threads(tmp_path, capsys, monkeypatch):
    cfg = write(tmp_path, SMALL)
    assert run(["run", cfg, "--out", tmp_path / "a", "--threads", 1], capsys)[0] == EXIT_OK
    assert run(["run", cfg, "--out", tmp_path / "b", "--threads", 4], capsys)[0] == EXIT_OK
    monkeypatch.setenv("LPSV_THREADS", "3")
    assert run(["run", cfg, "--out", tmp_path / "c"], capsys)[0] == EXIT_OK
    a, b, c = (artifacts(tmp_path / d) for d in "abc")
    assert a == b == c
    assert set(a) >= {"loss.csv", "loss_spde.csv", "compare.jsonl"}
    assert json.loads((tmp_path / "c" / "manifest.json").read_text())["threads"] == 3


def test_seed_override_changes_output(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    run(["run", cfg, "--out", tmp_path / "a"], capsys)
    run(["run", cfg, "--out", tmp_path / "b", "--seed-override", 99], capsys)
    assert artifacts(tmp_path / "a")["loss.csv"] != artifacts(tmp_path / "b")["loss.csv"]
    manifest = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert manifest["seed"] == 99 and manifest["seed_override"] == 99


def test_bad_thread_counts(tmp_path, capsys, monkeypatch):
    cfg = write(tmp_path, SMALL)
    assert run(["run", cfg, "--threads", 0, "--out", tmp_path / "o"], capsys)[0] == \
        EXIT_VALIDATION
    monkeypatch.setenv("LPSV_THREADS", "many")
    assert run(["run", cfg, "--out", tmp_path / "o"], capsys)[0] == EXIT_VALIDATION
    assert run(["run", cfg, "--seed-override", -1, "--out", tmp_path / "o"], capsys)[0] == \
        EXIT_VALIDATION


def test_unwritable_output_is_a_runtime_error(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(["run", CONFIGS / "minimal.yaml", "--out", blocker / "sub"], capsys)
    assert code == EXIT_RUNTIME
    assert json.loads(err)["error"] == "runtime"


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "lpsv.cli", "validate",
                           str(CONFIGS / "minimal.yaml")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "lpsv.cli", "validate",
                           str(tmp_path / "missing.yaml")], capture_output=True, text=True)
    assert proc.returncode == 1


def test_load_scenario_hashes_text():
    a = load_scenario(CONFIGS / "minimal.yaml")
    assert len(a.text_hash) == 64
    assert a.with_seed(5).seed == 5
