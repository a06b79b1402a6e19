import json
import subprocess
import sys

import numpy as np
import pytest

from csb.cli import main, parse_do
from csb.formats import load_matrix, read_f32
from csb.graph_scm import confounder_scm


@pytest.fixture
def scm_path(tmp_path):
    p = tmp_path / "scm.json"
    confounder_scm(0.3).save(p)
    return p


@pytest.fixture
def model_dir(tmp_path, scm_path):
    out = tmp_path / "model"
    assert main(["fit", "--scm", str(scm_path), "-n", "3000", "--sigma", "0", "--out", str(out)]) == 0
    return out


def test_parse_do():
    assert parse_do("Y=3, Z=-1.5") == {"Y": 3.0, "Z": -1.5}
    assert parse_do("") == {} and parse_do(None) == {}
    for bad in ("Y", "Y=abc", "=1", "Y=nan"):
        with pytest.raises(Exception):
            parse_do(bad)


def test_sample_csv_and_binary(tmp_path, scm_path):
    csv_out, bin_out = tmp_path / "s.csv", tmp_path / "s.bin"
    assert main(["sample", "--scm", str(scm_path), "-n", "50", "--out", str(csv_out)]) == 0
    assert main(["sample", "--scm", str(scm_path), "-n", "50", "--out", str(bin_out)]) == 0
    data, names = load_matrix(csv_out)
    assert names == ["X", "Y", "Z"] and data.shape == (50, 3)
    assert np.allclose(read_f32(bin_out), data, atol=1e-5)


def test_sample_with_do(tmp_path, scm_path):
    out = tmp_path / "s.csv"
    assert main(["sample", "--scm", str(scm_path), "-n", "20", "--do", "Y=3", "--out", str(out)]) == 0
    data, _ = load_matrix(out)
    assert np.all(data[:, 1] == 3.0)


def test_same_seed_same_output(tmp_path, scm_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        main(["sample", "--scm", str(scm_path), "-n", "30", "--seed", "5", "--out", str(p)])
    assert a.read_bytes() == b.read_bytes()


def test_fit_counterfactual_round_trip(tmp_path, model_dir):
    fact = tmp_path / "fact.csv"
    fact.write_text("X,Y,Z\n-3.93,-8.22,-8.27\n0.5,1.2,0.9\n")
    out = tmp_path / "cf.csv"
    assert main(["counterfactual", "--model", str(model_dir), "--fact", str(fact), "--sigma", "0",
                 "--out", str(out)]) == 0
    got, names = load_matrix(out)
    want, _ = load_matrix(fact)
    assert names == ["X", "Y", "Z"]
    assert np.max(np.abs(got - want)) <= 1e-2


def test_counterfactual_do_moves_descendants_only(tmp_path, model_dir, capsys):
    fact = tmp_path / "fact.csv"
    fact.write_text("X,Y,Z\n-3.93,-8.22,-8.27\n")
    assert main(["counterfactual", "--model", str(model_dir), "--fact", str(fact), "--sigma", "0",
                 "--do", "Y=3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    row = [float(v) for v in lines[1].split(",")]
    assert lines[0] == "X,Y,Z" and row[1] == 3.0
    assert abs(row[0] + 3.93) <= 1e-2 and abs(row[2] + 8.27) <= 0.2


def test_usage_errors_exit_1(capsys, tmp_path, model_dir):
    assert main(["bogus"]) == 1
    assert "usage: csb" in capsys.readouterr().err
    assert main([]) == 1
    fact = tmp_path / "f.csv"
    fact.write_text("X,Y,Z\n0,0,0\n")
    assert main(["counterfactual", "--model", str(model_dir), "--fact", str(fact), "--do", "Q=1"]) == 1
    assert main(["counterfactual", "--model", str(model_dir), "--fact", str(fact), "--do", "Y"]) == 1


def test_runtime_errors_exit_2(tmp_path, capsys):
    fact = tmp_path / "f.csv"
    fact.write_text("X,Y,Z\n0,0,0\n")
    assert main(["counterfactual", "--model", str(tmp_path / "missing"), "--fact", str(fact)]) == 2
    assert "csb:" in capsys.readouterr().err


def test_help_exits_0():
    assert main(["--help"]) == 0


def test_calibrate_baseline_json(tmp_path, capsys):
    out = tmp_path / "cal.json"
    assert main(["calibrate-baseline", "--dref", "10", "--trials", "2", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert json.loads(capsys.readouterr().out) == doc
    assert doc["d_ref"] == 10 and doc["t_ref"] > 0 and doc["I"] == 100
    assert len(doc["extrapolations"]) == 3


def test_experiment_with_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"n": 3000, "n_mc": 300, "grid_steps": 10, "n_perturbations": 1}))
    out = tmp_path / "run"
    assert main(["experiment", "kl-additivity", "--config", str(cfg), "--out", str(out)]) == 0
    doc = json.loads((out / "report.json").read_text())
    assert doc["config"]["n"] == 3000 and (out / "metrics.csv").exists()
    assert json.loads(capsys.readouterr().out)["experiment"] == "kl-additivity"
    assert main(["experiment", "nope", "--out", str(out)]) == 1


def test_module_entry_point(tmp_path, scm_path):
    r = subprocess.run([sys.executable, "-m", "csb.cli", "sample", "--scm", str(scm_path), "-n", "3"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.splitlines()[0] == "X,Y,Z"
    r = subprocess.run([sys.executable, "-m", "csb.cli", "frobnicate"], capture_output=True, text=True)
    assert r.returncode == 1 and "usage: csb" in r.stderr
