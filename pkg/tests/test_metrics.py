import csv
import json

import numpy as np
import pytest

from csb.errors import DegenerateTarget, EmptyProtectedSet, ShapeMismatch
from csb.metrics import ExperimentReport, mechanism_leakage, recovery_mse, support_coverage, transport_cost_l2

rng = np.random.default_rng(0)
A = rng.standard_normal((500, 4))


def test_leakage_examples():
    assert mechanism_leakage(A, A, [0, 2]) == 0.0
    post = A.copy()
    post[:, 1] += A[:, 1].std()
    assert mechanism_leakage(A, post, [1]) == pytest.approx(1.0)
    with pytest.raises(EmptyProtectedSet):
        mechanism_leakage(A, A, [])
    with pytest.raises(ShapeMismatch):
        mechanism_leakage(A, A[:10], [0])


def test_coverage_examples():
    assert support_coverage(A, A) == pytest.approx(1.0)
    collapsed = np.zeros((500, 4)) + np.array([0.1, -0.3, 2.0, 5.0])
    assert support_coverage(collapsed, A) == 0.0
    bad = A.copy()
    bad[:, 3] = 2.0
    with pytest.raises(DegenerateTarget):
        support_coverage(A, bad)
    assert support_coverage(2 * A, A) == pytest.approx(2.0)


def test_recovery_mse_examples():
    assert recovery_mse(A, A) == 0.0
    truth = np.random.default_rng(1).standard_normal((20_000, 3))
    assert abs(recovery_mse(np.zeros_like(truth), truth) - 1.0) <= 0.05
    with pytest.raises(ShapeMismatch):
        recovery_mse(A, A.T)


def test_transport_cost_examples():
    assert transport_cost_l2(A, A) == 0.0
    x = np.linspace(-1, 1, 7)
    assert transport_cost_l2(x, x + 3) == pytest.approx(3.0)
    with pytest.raises(ShapeMismatch):
        transport_cost_l2(A, A[:, :2])


def test_rescaling_invariance():
    post = A + np.array([0.5, -0.2, 0.0, 1.0])
    k = np.array([3.0, 0.1, 7.0, 2.0])
    assert mechanism_leakage(A * k, post * k, [0, 1, 3]) == pytest.approx(mechanism_leakage(A, post, [0, 1, 3]))
    assert support_coverage(post * k, A * k) == pytest.approx(support_coverage(post, A))


def test_report_rejects_non_finite():
    with pytest.raises(ValueError):
        ExperimentReport("x", {"a": float("nan")})


def test_report_files(tmp_path):
    r = ExperimentReport("demo", {"b": 2.0, "a": 1}, 0.5, seed=3, config={"k": 1},
                         tables={"paths": (np.ones((2, 2)), ["t", "x_0"])})
    r.write(tmp_path)
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["metrics"] == {"b": 2.0, "a": 1.0} and doc["seed"] == 3
    assert doc["config_hash"] == r.config_hash and len(r.config_hash) == 16
    assert doc["hardware"]
    rows = list(csv.reader(open(tmp_path / "metrics.csv")))
    assert rows[0] == ["name", "seed", "config_hash", "wall_time_s", "a", "b"]
    assert (tmp_path / "paths.csv").read_text().splitlines()[0] == "t,x_0"
    assert r["a"] == 1.0


def test_config_hash_ignores_key_order():
    a = ExperimentReport("x", {}, config={"p": 1, "q": [1, 2]})
    b = ExperimentReport("x", {}, config={"q": [1, 2], "p": 1})
    assert a.config_hash == b.config_hash


hyp = pytest.importorskip("hypothesis")
from hypothesis import given, settings  # noqa: E402
from hypothesis import strategies as st  # noqa: E402


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_metrics_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    pre = r.standard_normal((40, 3))
    post = pre + r.standard_normal((40, 3))
    perm = r.permutation(40)
    assert mechanism_leakage(pre[perm], post[perm], [0, 2]) == pytest.approx(mechanism_leakage(pre, post, [0, 2]))
    assert support_coverage(post[perm], pre) == pytest.approx(support_coverage(post, pre))
    assert recovery_mse(post[perm], pre[perm]) == pytest.approx(recovery_mse(post, pre))
    assert transport_cost_l2(pre[perm], post[perm]) == pytest.approx(transport_cost_l2(pre, post))
