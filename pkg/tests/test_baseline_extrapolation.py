import numpy as np
import pytest

from csb import baseline_extrapolation as be
from csb.errors import SingularMatrix

PAPER = be.CubicCostModel(50, be.REFERENCE_T_REF, 100)


def test_reference_extrapolation():
    s = be.extrapolate(PAPER, 100_000)
    assert abs(s / 2.008e8 - 1) <= 1e-3
    assert be.years(s) == pytest.approx(6.37, abs=0.005)
    assert be.human_duration(s).endswith("years")


def test_extrapolation_identities():
    m = be.CubicCostModel(40, 0.01, 1)
    assert be.extrapolate(m, 40) == pytest.approx(0.01)
    m = be.CubicCostModel(40, 0.01, 7)
    assert be.extrapolate(m, 80) == pytest.approx(8 * 7 * 0.01)
    for d in (50, 333, 10_000):
        assert be.extrapolate(m, 2 * d) / be.extrapolate(m, d) == pytest.approx(8.0)


def test_memory_wall():
    assert abs(be.memory_wall_estimate(100_000, 4) / 4e10 - 1) <= 0.01
    assert be.memory_wall_estimate(1, 4) == 4
    assert be.memory_wall_estimate(100_000, 4, factor=10) == pytest.approx(4e11)
    with pytest.raises(ValueError):
        be.memory_wall_estimate(0)


def test_inverse_correctness_gate():
    assert be.check_inverse(50) <= 1e-8
    eye = np.eye(50)
    assert np.array_equal(np.array(be.gauss_jordan_inverse(eye.tolist())), eye)


def test_singular_matrix():
    with pytest.raises(SingularMatrix):
        be.gauss_jordan_inverse([[1.0, 2.0], [2.0, 4.0]])


def test_calibration_is_positive_and_cubic():
    small = be.calibrate(30, trials=5, seed=0)
    big = be.calibrate(60, trials=5, seed=0)
    assert small.t_ref > 0 and small.iterations == 100
    assert big.t_ref > small.t_ref
    assert 4 <= big.t_ref / small.t_ref <= 16


def test_calibration_bounds_and_validation():
    with pytest.raises(ValueError):
        be.calibrate(513, trials=1)
    with pytest.raises(ValueError):
        be.CubicCostModel(1, 0.1)
    with pytest.raises(ValueError):
        be.CubicCostModel(50, 0.0)
    with pytest.raises(ValueError):
        be.CubicCostModel(50, 0.1, 0)


def test_report_layout():
    doc = be.report(PAPER)
    assert {"t_ref", "d_ref", "I", "extrapolations"} <= set(doc)
    assert [r["d"] for r in doc["extrapolations"]] == [1_000, 10_000, 100_000]
    assert all({"d", "seconds", "human"} <= set(r) for r in doc["extrapolations"])
