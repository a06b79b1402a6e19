"""Evaluation metrics and experiment reports."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DegenerateTarget, EmptyProtectedSet, ShapeMismatch


def _mat(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def mechanism_leakage(pre, post, protected: Iterable[int]) -> float:
    """Mean over protected columns of |mean(post) - mean(pre)| / std(pre).

    Columns with zero spread in ``pre`` use an absolute shift instead.
    """
    protected = sorted(set(int(i) for i in protected))
    if not protected:
        raise EmptyProtectedSet("no protected coordinates")
    a, b = _mat(pre)[:, protected], _mat(post)[:, protected]
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatch(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    sd = _std(a)
    sd = np.where(sd > 0, sd, 1.0)
    return float(np.mean(np.abs(b.mean(axis=0) - a.mean(axis=0)) / sd))


def _std(x) -> np.ndarray:
    # constant columns get exactly 0 (np.std can leave ~1e-16 of roundoff)
    return np.where(np.ptp(x, axis=0) == 0, 0.0, x.std(axis=0))


def support_coverage(generated, target) -> float:
    """Mean over columns of std(generated) / std(target)."""
    g, t = _mat(generated), _mat(target)
    if g.shape[1] != t.shape[1]:
        raise ShapeMismatch(f"dimensions differ: {g.shape[1]} vs {t.shape[1]}")
    st = _std(t)
    if np.any(st <= 0):
        raise DegenerateTarget("target has a zero-variance column")
    return float(np.mean(_std(g) / st))


def recovery_mse(predicted, truth) -> float:
    p, t = np.asarray(predicted, dtype=float), np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ShapeMismatch(f"shapes differ: {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


def transport_cost_l2(source, generated) -> float:
    """Mean Euclidean distance between paired rows."""
    s, g = _mat(source), _mat(generated)
    if s.shape != g.shape:
        raise ShapeMismatch(f"shapes differ: {s.shape} vs {g.shape}")
    return float(np.mean(np.linalg.norm(g - s, axis=1)))


def config_hash(cfg) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def hardware_note() -> str:
    return f"{platform.machine()} {platform.processor() or 'cpu'}; python {platform.python_version()}; numpy {np.__version__}"


@dataclass
class ExperimentReport:
    name: str
    metrics: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    config_hash: str = ""
    seed: int = 0
    config: dict = field(default_factory=dict)
    hardware: str = field(default_factory=hardware_note)
    input_hash: str = ""
    notes: dict = field(default_factory=dict)
    # name -> (matrix, column names); written as <name>.csv next to the report
    tables: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.metrics = {k: float(v) for k, v in self.metrics.items()}
        bad = [k for k, v in self.metrics.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite metrics: {bad}")
        if not self.config_hash:
            self.config_hash = config_hash(self.config)

    def __getitem__(self, key):
        return self.metrics[key]

    def to_json(self) -> dict:
        return {"name": self.name, "metrics": self.metrics, "wall_time_s": self.wall_time_s,
                "config_hash": self.config_hash, "seed": self.seed, "config": self.config,
                "hardware": self.hardware, "input_hash": self.input_hash, "notes": self.notes}

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(self.to_json(), indent=2, default=str))
        keys = sorted(self.metrics)
        with open(out / "metrics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "seed", "config_hash", "wall_time_s", *keys])
            w.writerow([self.name, self.seed, self.config_hash, f"{self.wall_time_s:.6f}",
                        *[repr(self.metrics[k]) for k in keys]])
        from .formats import write_csv

        for name, (matrix, cols) in self.tables.items():
            write_csv(out / f"{name}.csv", matrix, list(cols))
        return out / "report.json"
