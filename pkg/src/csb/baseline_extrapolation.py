"""Cost model for a dense O(d^3) solver: local calibration and extrapolation."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass

import numpy as np

from .errors import SingularMatrix

SECONDS_PER_YEAR = 365 * 24 * 3600
REFERENCE_T_REF = 0.000251  # seconds at d_ref = 50, reference hardware
DEFAULT_ITERATIONS = 100


@dataclass(frozen=True)
class CubicCostModel:
    d_ref: int
    t_ref: float
    iterations: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        if not self.t_ref > 0:
            raise ValueError("t_ref must be positive")
        if self.d_ref < 2:
            raise ValueError("d_ref must be at least 2")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")


def gauss_jordan_inverse(a) -> list[list[float]]:
    """Inverse by Gauss-Jordan elimination with partial pivoting, in plain Python.

    Kept free of BLAS so the timed work is the same O(d^3) loop everywhere.
    """
    n = len(a)
    m = [list(map(float, row)) + [1.0 if i == j else 0.0 for j in range(n)] for i, row in enumerate(a)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if abs(m[piv][col]) < 1e-12:
            raise SingularMatrix(f"pivot {col} is numerically zero")
        m[col], m[piv] = m[piv], m[col]
        prow = m[col]
        inv = 1.0 / prow[col]
        prow = [v * inv for v in prow]
        m[col] = prow
        for r in range(n):
            if r != col:
                row = m[r]
                f = row[col]
                if f != 0.0:
                    m[r] = [x - f * y for x, y in zip(row, prow)]
    return [row[n:] for row in m]


def _random_matrix(d, rng) -> list[list[float]]:
    return rng.standard_normal((d, d)).tolist()


def calibrate(d_ref: int = 50, trials: int = 20, seed: int = 42, iterations: int = DEFAULT_ITERATIONS,
              max_retries: int = 5) -> CubicCostModel:
    """Median wall time of a dense d_ref x d_ref inversion (one warm-up run discarded)."""
    if d_ref > 512:
        raise ValueError("d_ref must be at most 512 for dense calibration")
    rng = np.random.default_rng(seed)
    times = []
    for k in range(trials + 1):
        for _ in range(max_retries):
            a = _random_matrix(d_ref, rng)
            try:
                t0 = time.perf_counter()
                gauss_jordan_inverse(a)
                dt = time.perf_counter() - t0
                break
            except SingularMatrix:
                continue
        else:
            raise SingularMatrix(f"no invertible draw in {max_retries} attempts")
        if k > 0:
            times.append(dt)
    return CubicCostModel(int(d_ref), float(statistics.median(times)), int(iterations))


def extrapolate(model: CubicCostModel, d: int) -> float:
    """T(d) = t_ref * (d / d_ref)^3 * I."""
    return model.t_ref * (d / model.d_ref) ** 3 * model.iterations


def memory_wall_estimate(d: int, bytes_per_entry: int = 4, factor: float = 1.0) -> float:
    """Bytes to hold a dense d x d matrix, times ``factor`` (e.g. 10 for Hessian-based variants)."""
    if d < 1:
        raise ValueError("d must be positive")
    return float(d) * float(d) * bytes_per_entry * factor


def human_duration(seconds: float) -> str:
    if seconds >= SECONDS_PER_YEAR:
        return f"{seconds / SECONDS_PER_YEAR:.2f} years"
    if seconds >= 86400:
        return f"{seconds / 86400:.2f} days"
    if seconds >= 3600:
        return f"{seconds / 3600:.2f} hours"
    if seconds >= 60:
        return f"{seconds / 60:.2f} minutes"
    return f"{seconds:.4g} s"


def report(model: CubicCostModel, dims=(1_000, 10_000, 100_000)) -> dict:
    rows = []
    for d in dims:
        s = extrapolate(model, d)
        rows.append({"d": int(d), "seconds": s, "human": human_duration(s),
                     "memory_bytes": memory_wall_estimate(d, 4)})
    return {"t_ref": model.t_ref, "d_ref": model.d_ref, "I": model.iterations,
            "reference_t_ref": REFERENCE_T_REF, "extrapolations": rows}


def years(seconds: float) -> float:
    return seconds / SECONDS_PER_YEAR


def check_inverse(d: int = 50, seed: int = 0) -> float:
    """max |A A^-1 - I| for a random well-conditioned matrix."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((d, d)) + d * np.eye(d) * 0.1
    inv = np.array(gauss_jordan_inverse(a.tolist()))
    return float(np.max(np.abs(a @ inv - np.eye(d))))


__all__ = ["CubicCostModel", "calibrate", "extrapolate", "memory_wall_estimate", "gauss_jordan_inverse",
           "human_duration", "report", "years", "check_inverse", "SECONDS_PER_YEAR", "REFERENCE_T_REF"]
