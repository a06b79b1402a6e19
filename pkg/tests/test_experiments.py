import json

import numpy as np
import pytest

from csb.experiments import REGISTRY, run
from csb.experiments.confounder import misspecified_oracle

CONF = {"n": 2000, "n_draws": 20, "steps": 20, "baseline_steps": 50, "population": 100}
SMALL = {
    "confounder": CONF,
    "misspecified": CONF,
    "tunneling": {"n": 300, "steps": 50, "grid_steps": 10, "n_gen": 200, "sweep": [0.0, 0.5]},
    "bench1000": {"d": 20, "n": 200, "train_steps": 20, "grid_steps": 5, "n_gen": 50, "n_cf": 10,
                  "timing_repeats": 1},
    "fullrank": {"d": 64, "d_small": 32, "n_train": 64, "n_test": 8, "steps": 20, "crop": 32,
                 "mlp_hidden": 16},
    "manifold": {"d": 20, "n": 200, "n_test": 50, "steps": 50, "grid_steps": 5,
                 "calibration_dref": 10, "calibration_trials": 1},
    "kl-additivity": {"n": 5000, "n_mc": 500, "grid_steps": 20, "n_perturbations": 2},
}


def _timing(key):
    return key.endswith("_s") or "speedup" in key or "time_ratio" in key or key == "local_t_ref"


def test_every_runner_has_a_small_config():
    assert set(SMALL) == set(REGISTRY)


@pytest.mark.parametrize("name", sorted(SMALL))
def test_runner_smoke_and_reproducible(name, tmp_path):
    a = run(name, seed=7, cfg=SMALL[name])
    b = run(name, seed=7, cfg=SMALL[name])
    assert a.metrics and all(np.isfinite(v) for v in a.metrics.values())
    assert a.config_hash == b.config_hash and a.hardware and a.seed == 7
    stable = {k: v for k, v in a.metrics.items() if not _timing(k)}
    assert stable == {k: v for k, v in b.metrics.items() if not _timing(k)}
    a.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["name"] and doc["config_hash"] == a.config_hash
    for table in a.tables:
        assert (tmp_path / f"{table}.csv").exists()


def test_seed_changes_results():
    a = run("kl-additivity", seed=1, cfg=SMALL["kl-additivity"])
    b = run("kl-additivity", seed=2, cfg=SMALL["kl-additivity"])
    assert a.metrics["total_energy"] != b.metrics["total_energy"]


def test_misspecified_oracle_value():
    c = {"noise_std": 0.3, "factual": [-3.93, -8.22, -8.27], "do_value": 3.0}
    # Y -> X regression: w = 2/4.09, residual sd = sqrt(1 - 4/4.09)
    w, sd = 2 / 4.09, np.sqrt(1 - 4 / 4.09)
    x_new = w * 3.0 + sd * (-3.93 - w * -8.22) / sd
    assert misspecified_oracle(c) == pytest.approx(abs(2 * (x_new + 3.93)))
    assert misspecified_oracle(c) == pytest.approx(10.97, abs=0.01)


def test_unknown_experiment():
    with pytest.raises(KeyError):
        run("nope")
