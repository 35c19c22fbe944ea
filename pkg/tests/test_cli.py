import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from fbsde_tree.cli import (EXIT_FAILED, EXIT_INVALID, EXIT_NOT_CONVERGED, EXIT_OK, load_config,
                            main)
from fbsde_tree.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(config, out, *extra):
    status = main(["run", str(config), "--out", str(out), "--quiet", *extra])
    report = json.loads((Path(out) / "report.json").read_text())
    return status, report


def test_flq_hand_instance(tmp_path):
    status, rep = _run(CONFIGS / "flq_hand.json", tmp_path)
    assert status == EXIT_OK and rep["status"] == "ok"
    assert rep["results"]["xi"][0] == pytest.approx(-1 / 3, abs=1e-10)
    assert rep["results"]["cost"] == pytest.approx(1 / 6, abs=1e-10)
    assert rep["results"]["u"][0]["nodes"][0][0] == pytest.approx(-1 / 3, abs=1e-10)
    assert rep["schema"] == "fbsde-tree-report/1"


def test_check_mode_family(tmp_path):
    status, rep = _run(CONFIGS / "check_monotone.json", tmp_path)
    assert status == EXIT_OK and rep["results"]["violations"] == 0


def test_check_mode_reports_violation(tmp_path):
    cfg = {"mode": "check", "topology": {"horizon": 2}, "dimensions": {"n": 1},
           "coefficients": {"affine": {"initial": {"matrix": -1.0}, "driver": {"x": 1.0}},
                            "domination": {"mu": 1.0, "M": 1.0}},
           "check": {"samples": 500}}
    status, rep = _run(_write(tmp_path, cfg), tmp_path / "out")
    assert status == EXIT_FAILED and rep["results"]["violations"] > 0


def test_missing_horizon_names_key(tmp_path, capsys):
    status = main(["run", str(CONFIGS / "bad_missing_horizon.json"), "--out", str(tmp_path)])
    assert status == EXIT_INVALID
    assert "horizon" in capsys.readouterr().err


def test_unknown_key_rejected(tmp_path):
    cfg = {"mode": "sde", "topology": {"horizon": 2}, "sde": {"eta": [0.0]}, "colour": 1}
    with pytest.raises(ConfigError) as info:
        load_config(_write(tmp_path, cfg))
    assert "colour" in str(info.value)


def test_unreadable_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == EXIT_INVALID
    assert main(["validate", str(tmp_path / "missing.json")]) == EXIT_INVALID


def test_validate_verb(capsys):
    assert main(["validate", str(CONFIGS / "fbsde_monotone.json")]) == EXIT_OK
    assert "valid" in capsys.readouterr().out


def test_validate_catches_semantic_error(tmp_path):
    cfg = {"mode": "insurance", "topology": {"horizon": 2},
           "insurance": {"r": 0, "rho": 0, "sigma": [1.0, -1.0], "lam": 0, "c": 1, "m0": 1}}
    assert main(["validate", _write(tmp_path, cfg), "--quiet"]) == EXIT_INVALID


def test_reports_are_byte_identical(tmp_path):
    for sub in ("a", "b"):
        main(["run", str(CONFIGS / "fbsde_monotone.json"), "--out", str(tmp_path / sub),
              "--quiet"])
    for name in ("report.json", "trajectories.csv", "diagnostics.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_seed_override_is_recorded(tmp_path):
    _, base = _run(CONFIGS / "fbsde_monotone.json", tmp_path / "a")
    _, over = _run(CONFIGS / "fbsde_monotone.json", tmp_path / "b", "--seed", "42")
    assert over["seeds"] == {"config": 42, "coefficients": 42, "perturbation": 43,
                             "condition_samples": 42}
    assert base["seeds"]["config"] == 3
    assert over["results"]["x"] != base["results"]["x"]


def test_bad_seed(tmp_path):
    assert main(["run", str(CONFIGS / "sde.json"), "--seed", "-1", "--quiet"]) == EXIT_INVALID


def test_fbsde_outputs_and_csv(tmp_path):
    status, rep = _run(CONFIGS / "fbsde_affine.json", tmp_path)
    assert status == EXIT_OK
    assert rep["results"]["conditions"]["passed"]
    assert rep["results"]["direct_oracle"]["relative_distance"] <= 1e-8
    with open(tmp_path / "trajectories.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {r["process"] for r in rows} == {"x", "y"}
    # 1 + 2 + 4 + 8 nodes per process, one component
    assert len(rows) == 2 * 15
    with open(tmp_path / "diagnostics.csv") as fh:
        diag = list(csv.DictReader(fh))
    assert len(diag) == len(rep["results"]["diagnostics"]["alpha_grid"])


def test_csv_can_be_disabled(tmp_path):
    cfg = json.loads((CONFIGS / "sde.json").read_text())
    cfg["output"] = {"csv": False}
    status, _ = _run(_write(tmp_path, cfg), tmp_path / "out")
    assert status == EXIT_OK and not (tmp_path / "out" / "trajectories.csv").exists()


def test_flipped_orientation_maps_back(tmp_path):
    base = json.loads((CONFIGS / "fbsde_affine.json").read_text())
    _, std = _run(_write(tmp_path, base, "std.json"), tmp_path / "std")
    flipped = json.loads(json.dumps(base))
    aff = flipped["coefficients"]["affine"]
    # the same system written for (x, -y): flips the sign of every y/z input,
    # of the terminal map and of the driver output
    aff["initial"] = {"matrix": 1.0, "offset": 1.0}
    aff["terminal"] = {"matrix": -1.0}
    aff["drift"]["y"] = 0.5
    aff["diffusion"]["z"] = 0.3
    aff["driver"] = {"x": 1.0}
    flipped["solver"] = {"orientation": "flipped"}
    status, rep = _run(_write(tmp_path, flipped, "flip.json"), tmp_path / "flip")
    assert status == EXIT_OK and rep["results"]["conditions"]["passed"]
    assert rep["results"]["orientation"] == "flipped"
    assert rep["results"]["residual"]["overall"] <= 1e-9
    for key, sign in (("x", 1.0), ("y", -1.0)):
        for a, b in zip(std["results"][key], rep["results"][key]):
            assert all(abs(sign * p[0] - q[0]) <= 1e-9 for p, q in zip(a["nodes"], b["nodes"]))


def test_forced_non_convergence_writes_diagnostics(tmp_path):
    cfg = {"mode": "fbsde", "seed": 1100, "topology": {"horizon": 5},
           "dimensions": {"n": 2, "m": 1},
           "coefficients": {"family": "monotone", "coupling": 1.0},
           "solver": {"tol": 1e-12, "delta_init": 1.0, "delta_min": 1.0}}
    status, rep = _run(_write(tmp_path, cfg), tmp_path / "out")
    assert status == EXIT_NOT_CONVERGED and rep["status"] == "not_converged"
    assert rep["error"]["type"] == "ConvergenceError"
    assert rep["results"]["diagnostics"]["attempts"][0]["status"] == "failed"


@pytest.mark.parametrize("name, keys", [
    ("sde.json", {"x", "zero_data_estimate"}),
    ("bsde.json", {"y"}),
    ("insurance.json", {"wealth", "liability", "residual"}),
    ("blq_random.json", {"v", "cost", "oracle"}),
])
def test_other_modes(tmp_path, name, keys):
    status, rep = _run(CONFIGS / name, tmp_path)
    assert status == EXIT_OK, rep["error"]
    assert keys <= set(rep["results"])


def test_insurance_report_accuracy(tmp_path):
    _, rep = _run(CONFIGS / "insurance.json", tmp_path)
    assert rep["results"]["residual"] <= 1e-12
    assert rep["results"]["y0_path_error"] <= 1e-12
    assert rep["results"]["liability"][0]["level"] == 1


def test_blq_oracle_agreement(tmp_path):
    _, rep = _run(CONFIGS / "blq_random.json", tmp_path)
    assert rep["results"]["oracle"]["control_gap"] <= 1e-8
    assert rep["results"]["stationarity"] <= 1e-10


def test_empty_suite_selection(tmp_path):
    cfg = {"mode": "suite", "suite": {"criteria": []}}
    status = main(["suite", _write(tmp_path, cfg), "--out", str(tmp_path), "--quiet"])
    assert status == EXIT_INVALID


def test_suite_subset(tmp_path):
    cfg = {"mode": "suite", "seed": 5, "suite": {"criteria": [7, 9]}}
    status, rep = _run(_write(tmp_path, cfg), tmp_path / "out")
    assert status == EXIT_OK
    assert [c["number"] for c in rep["results"]["criteria"]] == [7, 9]
    assert rep["seeds"]["base"] == 5
    with open(tmp_path / "out" / "criteria.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2


def test_suite_verb_forces_mode(tmp_path, capsys):
    cfg = {"mode": "sde", "topology": {"horizon": 2}, "sde": {"eta": [0.0]},
           "suite": {"criteria": [7]}}
    status = main(["suite", _write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert status == EXIT_OK
    assert "criterion  7 PASS" in capsys.readouterr().out


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fbsde_tree", "validate",
                           str(CONFIGS / "flq_hand.json")], capture_output=True, text=True)
    assert proc.returncode == 0 and "valid" in proc.stdout
