"""Shared plumbing for experiment runners."""

from __future__ import annotations

import hashlib
import json
import time
from contextlib import contextmanager

import numpy as np

from ..sde_engine import TimeGrid, integrate_ode


def merged(defaults: dict, cfg: dict | None) -> dict:
    out = dict(defaults)
    for k, v in (cfg or {}).items():
        if k not in defaults:
            raise KeyError(f"unknown config key {k!r}")
        out[k] = v
    return out


def data_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:16]


@contextmanager
def stopwatch(store: dict, key: str):
    t0 = time.perf_counter()
    try:
        yield
    finally:
        store[key] = time.perf_counter() - t0


def forward_map(model, u, grid: TimeGrid):
    return integrate_ode(lambda x, t: model.drift(x, t, sigma=0.0), u, grid, keep_path=False).endpoint


def backward_map(model, x, grid: TimeGrid):
    return integrate_ode(lambda s, t: -model.drift(s, t, sigma=0.0), x, grid,
                         direction="backward", keep_path=False).endpoint


def latent_surgery(model, x_fact, col: int, value: float, grid: TimeGrid, bracket=8.0, iters=50):
    """Counterfactual for a structure-blind flow.

    Abduct the joint latent, then move only latent coordinate ``col`` until the
    forward image hits ``value`` in column ``col`` (vectorised bisection,
    assuming the forward map is increasing in that latent). The remaining
    latents are kept, so the other coordinates follow whatever dependence the
    joint flow has learned.
    """
    x = np.atleast_2d(np.asarray(x_fact, dtype=float))
    u = backward_map(model, x, grid)
    lo = u[:, col] - bracket
    hi = u[:, col] + bracket
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        trial = u.copy()
        trial[:, col] = mid
        y = forward_map(model, trial, grid)[:, col]
        below = y < value
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    u[:, col] = 0.5 * (lo + hi)
    return forward_map(model, u, grid), u


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=str)


def trajectory_table(states, names, max_samples: int = 64):
    """Long-format path table from forward-ordered states of shape (T, n, d).

    Columns are sample, t, then one per coordinate. Wide states keep their
    first 64 coordinates.
    """
    states = np.asarray(states)
    T, n = states.shape[:2]
    k = min(n, max_samples)
    s = states[:, :k].reshape(T, k, -1)[:, :, :64]
    names = list(names)[: s.shape[2]]
    t = np.linspace(0.0, 1.0, T)
    rows = np.concatenate([np.column_stack([np.full(T, j), t, s[:, j]]) for j in range(k)])
    return rows, ["sample", "t", *names]
